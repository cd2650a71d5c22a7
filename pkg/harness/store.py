"""
Artifact Store
==============
Worlds, recovered rewards and neural checkpoints on disk, each with a
`<artifact_id>_metadata.json` sidecar carrying its sha256 checksum. Loads
verify the checksum first.
"""

import hashlib
import json
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from core.errors import ArtifactError
from core.mdp import RewardModel, TabularSystem
from tabular.world import WorldConfig, world_from_dict, world_to_dict

logger = logging.getLogger(__name__)


class ArtifactStore:
    """
    Checksummed artifacts under one directory.

    Kinds:
    - world: versioned world JSON (graph, T, D0, theta, config)
    - reward: recovered reward JSON with provenance
    - checkpoint: network parameters (.npz) tagged with a config hash
    """

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _calculate_checksum(self, file_path: Path) -> str:
        sha256_hash = hashlib.sha256()
        with open(file_path, "rb") as f:
            for byte_block in iter(lambda: f.read(4096), b""):
                sha256_hash.update(byte_block)
        return sha256_hash.hexdigest()

    def _metadata_path(self, artifact_id: str) -> Path:
        return self.root / f"{artifact_id}_metadata.json"

    def _register(self, artifact_id: str, kind: str, path: Path, extra: Optional[Dict[str, Any]] = None) -> Dict:
        metadata = {
            "artifact_id": artifact_id,
            "kind": kind,
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "path": path.name,
            "size_bytes": path.stat().st_size,
            "checksum_sha256": self._calculate_checksum(path),
            **(extra or {}),
        }
        with open(self._metadata_path(artifact_id), "w") as f:
            json.dump(metadata, f, indent=2)
        logger.debug("stored %s artifact %s", kind, artifact_id)
        return metadata

    def _write_json(self, artifact_id: str, kind: str, payload: Dict[str, Any],
                    extra: Optional[Dict[str, Any]] = None) -> Dict:
        path = self.root / f"{artifact_id}.json"
        with open(path, "w") as f:
            json.dump(payload, f, sort_keys=True)
        return self._register(artifact_id, kind, path, extra)

    def metadata(self, artifact_id: str) -> Dict[str, Any]:
        metadata_path = self._metadata_path(artifact_id)
        if not metadata_path.exists():
            raise ArtifactError(f"artifact metadata not found: {artifact_id}")
        with open(metadata_path, "r") as f:
            return json.load(f)

    def verify(self, artifact_id: str) -> bool:
        """True when the artifact exists and matches its recorded checksum."""
        try:
            self._checked_path(artifact_id)
        except ArtifactError as exc:
            logger.warning("artifact check failed: %s", exc)
            return False
        return True

    def _checked_path(self, artifact_id: str, kind: Optional[str] = None) -> Path:
        metadata = self.metadata(artifact_id)
        if kind is not None and metadata["kind"] != kind:
            raise ArtifactError(f"{artifact_id} is a {metadata['kind']}, not a {kind}")
        path = self.root / metadata["path"]
        if not path.exists():
            raise ArtifactError(f"artifact file not found: {path}")
        if self._calculate_checksum(path) != metadata["checksum_sha256"]:
            raise ArtifactError(f"checksum mismatch for {artifact_id}")
        return path

    def list_artifacts(self, kind: Optional[str] = None) -> List[Dict[str, Any]]:
        artifacts = []
        for metadata_file in self.root.glob("*_metadata.json"):
            with open(metadata_file, "r") as f:
                metadata = json.load(f)
            if kind is None or metadata["kind"] == kind:
                artifacts.append(metadata)
        artifacts.sort(key=lambda m: (m["timestamp"], m["artifact_id"]))
        return artifacts

    def save_world(self, artifact_id: str, system: TabularSystem, reward: Optional[RewardModel] = None,
                   config: Optional[WorldConfig] = None) -> Dict:
        return self._write_json(artifact_id, "world", world_to_dict(system, reward, config))

    def load_world(self, artifact_id: str) -> Tuple[TabularSystem, Optional[RewardModel], Optional[WorldConfig]]:
        with open(self._checked_path(artifact_id, "world"), "r") as f:
            return world_from_dict(json.load(f))

    def save_reward(self, artifact_id: str, reward: RewardModel, provenance: Dict[str, Any]) -> Dict:
        """Store recovered weights with provenance (iteration, method, hyperparameters, log sha256)."""
        payload = {"theta": reward.weights.tolist(), "metadata": reward.metadata, "provenance": provenance}
        return self._write_json(artifact_id, "reward", payload, {"provenance": provenance})

    def load_reward(self, artifact_id: str) -> Tuple[RewardModel, Dict[str, Any]]:
        with open(self._checked_path(artifact_id, "reward"), "r") as f:
            payload = json.load(f)
        return RewardModel(np.array(payload["theta"]), metadata=payload["metadata"]), payload["provenance"]

    def save_checkpoint(self, artifact_id: str, arrays: Dict[str, np.ndarray], config_hash: str,
                        extra: Optional[Dict[str, Any]] = None) -> Dict:
        path = self.root / f"{artifact_id}.npz"
        np.savez(path, **arrays)
        return self._register(artifact_id, "checkpoint", path, {"config_hash": config_hash, **(extra or {})})

    def load_checkpoint(self, artifact_id: str, config_hash: Optional[str] = None) -> Dict[str, np.ndarray]:
        path = self._checked_path(artifact_id, "checkpoint")
        if config_hash is not None and self.metadata(artifact_id)["config_hash"] != config_hash:
            raise ArtifactError(f"checkpoint {artifact_id} belongs to another config")
        with np.load(path) as data:
            return {name: data[name] for name in data.files}
