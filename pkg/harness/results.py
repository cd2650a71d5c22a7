"""
Results Log
===========
Line-delimited JSON files of one run directory:

    results.jsonl  one record per (replica, iteration)
    events.log     run events: timestamp, run_id, event, result, severity, metadata
"""

import json
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

logger = logging.getLogger(__name__)

RESULTS_FILE = "results.jsonl"
EVENTS_FILE = "events.log"


class ResultsLog:
    """Appends records and events under `run_dir`."""

    def __init__(self, run_dir: Union[str, Path], run_id: str = ""):
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.run_id = run_id or self.run_dir.name
        self.results_file = self.run_dir / RESULTS_FILE
        self.events_file = self.run_dir / EVENTS_FILE

    def reset(self) -> None:
        """Truncate the results file before a forced rerun."""
        self.results_file.write_text("")

    def log_records(self, records: Iterable[Dict[str, Any]]) -> int:
        count = 0
        with open(self.results_file, "a") as f:
            for record in records:
                f.write(json.dumps({"run_id": self.run_id, **record}, sort_keys=True) + "\n")
                count += 1
        return count

    def log_event(self, event: str, result: str, severity: str = "INFO",
                  metadata: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
        entry = {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "run_id": self.run_id,
            "event": event,
            "result": result,
            "severity": severity,
            "metadata": metadata or {},
        }
        with open(self.events_file, "a") as f:
            f.write(json.dumps(entry) + "\n")
        level = {"WARNING": logging.WARNING, "ERROR": logging.ERROR, "CRITICAL": logging.CRITICAL}
        logger.log(level.get(severity, logging.INFO), "%s %s -> %s", self.run_id[:12], event, result)
        return entry

    def log_replica_failure(self, replica: int, seed: int, error: str) -> Dict[str, Any]:
        return self.log_event("replica_failed", "EXCLUDED", "WARNING",
                              {"replica": replica, "seed": seed, "error": error})


def read_jsonl(path: Union[str, Path]) -> List[Dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        return []
    with open(path, "r") as f:
        return [json.loads(line) for line in f if line.strip()]


def read_records(run_dir: Union[str, Path]) -> List[Dict[str, Any]]:
    return read_jsonl(Path(run_dir) / RESULTS_FILE)


def read_events(run_dir: Union[str, Path]) -> List[Dict[str, Any]]:
    return read_jsonl(Path(run_dir) / EVENTS_FILE)
