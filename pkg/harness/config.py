"""
Experiment Configuration
========================
One JSON file describes an experiment; `--set dotted.key=value` flags
override single fields. Everything is validated before any compute.

Environment (loaded from `.env` when present):
    ISO_WORKERS      worker pool size (default 1)
    ISO_RESULTS_DIR  output root (default ./results)
"""

import hashlib
import json
import os
from pathlib import Path
from typing import Any, Dict, Iterable, Literal, Optional, Union

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, field_validator

from neural.sandbox import NeuralConfig
from tabular.behavior import BehaviorType
from tabular.iso import IsoSettings
from tabular.world import WorldConfig

DEFAULT_RESULTS_DIR = "results"
CONFIG_FILE = "config.json"

# runtime knobs that do not change what is computed
_UNHASHED_FIELDS = {"output", "workers"}


class ExperimentConfig(BaseModel):
    """A replicated tabular or neural ISO experiment."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    mode: Literal["tabular", "neural"] = "tabular"
    world: WorldConfig = WorldConfig()
    iso: IsoSettings = IsoSettings()
    behavior: str = "optimal"
    irl_method: Literal["maxent", "dm-irl", "oracle"] = "maxent"
    neural: NeuralConfig = NeuralConfig()
    n_iterations: int = Field(30, ge=0)
    n_replicas: int = Field(10, ge=1)
    base_seed: int = Field(0, ge=0)
    max_failure_fraction: float = Field(0.2, ge=0.0, le=1.0)
    record_wall_time: bool = True
    save_rewards: bool = False
    output: Optional[str] = None
    workers: Optional[int] = Field(None, ge=1)

    @field_validator("behavior")
    @classmethod
    def _known_behavior(cls, value: str) -> str:
        return BehaviorType.parse(value).label

    @property
    def behavior_type(self) -> BehaviorType:
        return BehaviorType.parse(self.behavior)


class RuntimeSettings(BaseModel):
    workers: int = Field(1, ge=1)
    results_dir: str = DEFAULT_RESULTS_DIR


def load_environment(env_file: Optional[Union[str, Path]] = None) -> RuntimeSettings:
    """Read ISO_WORKERS / ISO_RESULTS_DIR, loading `.env` first if present."""
    load_dotenv(env_file)
    return RuntimeSettings(
        workers=int(os.getenv("ISO_WORKERS", "1")),
        results_dir=os.getenv("ISO_RESULTS_DIR", DEFAULT_RESULTS_DIR),
    )


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    return ExperimentConfig.model_validate_json(Path(path).read_text())


def save_config(config: ExperimentConfig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(config.model_dump_json(indent=2))
    return path


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(config: ExperimentConfig, overrides: Iterable[str]) -> ExperimentConfig:
    """
    Apply `dotted.key=value` overrides; values are parsed as JSON when they
    can be, else kept as strings.

    Raises:
        ValueError: malformed override or unknown key (pydantic ValidationError).
    """
    data: Dict[str, Any] = config.model_dump()
    for override in overrides:
        key, sep, raw = override.partition("=")
        if not sep or not key:
            raise ValueError(f"override must look like key=value, got {override!r}")
        node = data
        *parents, leaf = key.strip().split(".")
        for part in parents:
            if not isinstance(node.get(part), dict):
                raise ValueError(f"unknown config section {part!r} in {key!r}")
            node = node[part]
        node[leaf] = _parse_value(raw.strip())
    return ExperimentConfig.model_validate(data)


def config_hash(config: ExperimentConfig) -> str:
    """sha256 of the canonical JSON of everything that affects results."""
    canonical = json.dumps(config.model_dump(mode="json", exclude=_UNHASHED_FIELDS), sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
