"""
Plot Data
=========
Per-curve CSV files (iteration, mean, sem, n) from a results file, for any
external plotting tool. Tabular curves are keyed by (cf, behavior, irl
method), neural curves by (lambda, setup).
"""

import csv
import logging
from collections import defaultdict
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple, Union

from harness.config import CONFIG_FILE, ExperimentConfig, load_config
from harness.results import RESULTS_FILE, read_jsonl
from harness.stats import standard_error

logger = logging.getLogger(__name__)

CURVE_FIELDS = ["iteration", "mean", "sem", "n"]
ALL_CURVES_FILE = "all_curves.csv"


def curve_name(record: Dict[str, Any]) -> str:
    if record.get("mode") == "neural":
        return f"lambda{record['lambda']:g}_{record['setup']}"
    return f"cf{record['cf']}_{record['behavior']}_{record['irl_method']}"


def curve_rows(records: List[Dict[str, Any]]) -> Dict[str, List[Dict[str, Any]]]:
    """curve name -> one row per iteration aggregated over replicas."""
    grouped: Dict[Tuple[str, int], List[float]] = defaultdict(list)
    for record in records:
        grouped[(curve_name(record), record["iteration"])].append(record["quality"])
    curves: Dict[str, List[Dict[str, Any]]] = defaultdict(list)
    for (name, iteration), values in sorted(grouped.items()):
        curves[name].append({
            "iteration": iteration,
            "mean": sum(values) / len(values),
            "sem": standard_error(values),
            "n": len(values),
        })
    return dict(curves)


def _write_csv(path: Path, fields: List[str], rows: List[Dict[str, Any]]) -> Path:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
    return path


def expected_curves(config: ExperimentConfig) -> List[str]:
    """Curve names a run of `config` writes records under."""
    if config.mode == "neural":
        return [curve_name({"mode": "neural", "lambda": config.neural.lambda_kl, "setup": config.neural.setup})]
    return [curve_name({
        "mode": "tabular",
        "cf": config.world.connection_factor,
        "behavior": config.behavior,
        "irl_method": config.irl_method,
    })]


def emit_plot_data(
    results_path: Union[str, Path],
    out_dir: Union[str, Path],
    curves: Optional[Iterable[str]] = None,
) -> List[Path]:
    """
    Write one CSV per curve plus `all_curves.csv` (with a `curve` column).

    Curves named in `curves`, or by the run's config.json when `results_path`
    is a run directory, always get a file; those without records get headers
    only.

    Raises:
        ValueError: no records and no expected curves to name the files.
    """
    results_path = Path(results_path)
    expected = list(curves or [])
    if results_path.is_dir():
        if not expected and (results_path / CONFIG_FILE).exists():
            expected = expected_curves(load_config(results_path / CONFIG_FILE))
        results_path = results_path / RESULTS_FILE

    found = curve_rows(read_jsonl(results_path))
    if not found and not expected:
        raise ValueError(f"no records in {results_path} and no run config to name the curves")
    names = sorted(set(expected) | set(found))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    written = [_write_csv(out_dir / f"{name}.csv", CURVE_FIELDS, found.get(name, [])) for name in names]
    combined = [{"curve": name, **row} for name in names for row in found.get(name, [])]
    written.append(_write_csv(out_dir / ALL_CURVES_FILE, ["curve", *CURVE_FIELDS], combined))
    empty = [name for name in names if name not in found]
    if empty:
        logger.warning("no records for %s; wrote headers only", ", ".join(empty))
    logger.info("wrote %d curve files to %s", len(names), out_dir)
    return written
