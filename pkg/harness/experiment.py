"""
Experiment Runner
=================
Replicated ISO runs: each replica samples its own world from a derived seed
and runs the full loop. Replicas run in a process pool and are merged by
replica index, so aggregates do not depend on completion order.

Run directory layout (`<output>/<config hash>/`):
    config.json, results.jsonl, events.log, summary.json, metrics.prom,
    artifacts/ (recovered rewards, neural checkpoints)
"""

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from core.errors import ExperimentFailed
from harness.config import CONFIG_FILE, DEFAULT_RESULTS_DIR, ExperimentConfig, config_hash, save_config
from harness.results import ResultsLog, read_records
from harness.stats import SummaryStats, summarize_qualities
from harness.store import ArtifactStore
from monitoring.metrics import RunMetrics
from monitoring.performance import StageTimer
from neural.sandbox import run_iso_neural
from tabular.iso import run_iso

logger = logging.getLogger(__name__)

SUMMARY_FILE = "summary.json"
METRICS_FILE = "metrics.prom"


def derive_seed(base: int, index: int) -> int:
    """Replica seed from (base seed, replica index); new replicas never move old ones."""
    digest = hashlib.sha256(f"{base}:{index}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass
class ReplicaResult:
    replica: int
    seed: int
    records: List[Dict[str, Any]] = field(default_factory=list)
    error: Optional[str] = None
    stage_ms: Dict[str, List[float]] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class ExperimentOutcome:
    summary: SummaryStats
    run_dir: Path
    skipped: bool = False
    failures: List[ReplicaResult] = field(default_factory=list)


def _tabular_records(config: ExperimentConfig, replica: int, seed: int, store: Optional[ArtifactStore],
                     timer: StageTimer) -> List[Dict[str, Any]]:
    behavior = config.behavior_type

    def keep_reward(iteration, reward, digest):
        provenance = {"replica": replica, "seed": seed, "iteration": iteration,
                      "method": config.irl_method, "log_sha256": digest}
        store.save_reward(f"reward_r{replica:03d}_i{iteration:03d}", reward, provenance)

    history = run_iso(
        config.world.model_copy(update={"seed": seed}),
        behavior,
        config.irl_method,
        config.n_iterations,
        seed=derive_seed(seed, 1),
        settings=config.iso,
        timer=timer,
        on_reward=keep_reward if store is not None and config.save_rewards else None,
    )
    return [
        {
            "replica": replica,
            "seed": seed,
            "mode": "tabular",
            "iteration": record.iteration,
            "behavior": record.behavior,
            "irl_method": record.irl_method,
            "cf": config.world.connection_factor,
            "nf": behavior.noise_factor,
            "quality": record.quality,
            "wall_ms": round(record.wall_ms, 3) if config.record_wall_time else 0,
        }
        for record in history
    ]


def _neural_records(config: ExperimentConfig, replica: int, seed: int, store: Optional[ArtifactStore],
                    timer: StageTimer) -> List[Dict[str, Any]]:
    neural = config.neural.model_copy(update={"seed": seed, "n_iterations": config.n_iterations})
    digest = config_hash(config)

    def keep_checkpoint(iteration, system):
        store.save_checkpoint(f"system_r{replica:03d}_i{iteration:03d}", system.state_dict(), digest,
                              {"replica": replica, "iteration": iteration})

    history = run_iso_neural(neural, timer, keep_checkpoint if store is not None else None)
    return [
        {
            "replica": replica,
            "seed": seed,
            "mode": "neural",
            "iteration": record.iteration,
            "setup": record.setup,
            "lambda": record.lambda_kl,
            "quality": record.mean_return,
            "sem": record.sem,
            "wall_ms": round(record.wall_ms, 3) if config.record_wall_time else 0,
        }
        for record in history
    ]


def run_replica(config: ExperimentConfig, replica: int, artifact_dir: Optional[str] = None) -> ReplicaResult:
    """One replica; failures are captured in the result instead of raised."""
    seed = derive_seed(config.base_seed, replica)
    timer = StageTimer()
    store = ArtifactStore(artifact_dir) if artifact_dir else None
    run = _neural_records if config.mode == "neural" else _tabular_records
    try:
        records = run(config, replica, seed, store, timer)
    except Exception as exc:
        logger.warning("replica %d (seed %d) failed: %s", replica, seed, exc)
        return ReplicaResult(replica, seed, error=f"{type(exc).__name__}: {exc}", stage_ms=dict(timer.metrics))
    return ReplicaResult(replica, seed, records, stage_ms=dict(timer.metrics))


def _execute(config: ExperimentConfig, order: Sequence[int], workers: int,
             artifact_dir: Optional[str]) -> Dict[int, ReplicaResult]:
    if workers <= 1:
        return {replica: run_replica(config, replica, artifact_dir) for replica in order}
    results: Dict[int, ReplicaResult] = {}
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = {pool.submit(run_replica, config, replica, artifact_dir): replica for replica in order}
        for future in as_completed(futures):
            result = future.result()
            results[result.replica] = result
    return results


def _qualities(records: Sequence[Dict[str, Any]]) -> Dict[int, List[float]]:
    traces: Dict[int, List[float]] = {}
    for record in sorted(records, key=lambda r: (r["replica"], r["iteration"])):
        traces.setdefault(record["replica"], []).append(record["quality"])
    return traces


def _alternative(config: ExperimentConfig) -> str:
    return "greater" if config.mode == "neural" else "two-sided"


def _write_summary(run_dir: Path, summary: SummaryStats) -> None:
    with open(run_dir / SUMMARY_FILE, "w") as f:
        json.dump(summary.to_dict(), f, indent=2, sort_keys=True)


def load_summary(run_dir: Path) -> SummaryStats:
    with open(Path(run_dir) / SUMMARY_FILE, "r") as f:
        return SummaryStats.from_dict(json.load(f))


def run_experiment(
    config: ExperimentConfig,
    force: bool = False,
    workers: Optional[int] = None,
    output: Optional[str] = None,
    replica_order: Optional[Sequence[int]] = None,
) -> ExperimentOutcome:
    """
    Run every replica, write the run directory and return the summary.

    A finished run directory is reused unless `force` is set.

    Raises:
        ExperimentFailed: more than `max_failure_fraction` of replicas failed.
    """
    digest = config_hash(config)
    run_dir = Path(output or config.output or DEFAULT_RESULTS_DIR) / digest
    log = ResultsLog(run_dir, run_id=digest)

    if (run_dir / SUMMARY_FILE).exists() and not force:
        log.log_event("resume", "SKIPPED", metadata={"reason": "summary exists"})
        return ExperimentOutcome(load_summary(run_dir), run_dir, skipped=True)

    log.reset()
    save_config(config, run_dir / CONFIG_FILE)
    log.log_event("run_started", "RUNNING", metadata={"mode": config.mode, "replicas": config.n_replicas})

    order = list(replica_order) if replica_order is not None else list(range(config.n_replicas))
    if sorted(order) != list(range(config.n_replicas)):
        raise ValueError("replica_order must be a permutation of the replica indices")
    workers = workers or config.workers or 1
    artifact_dir = str(run_dir / "artifacts")
    results = _execute(config, order, workers, artifact_dir)

    metrics = RunMetrics(config.mode)
    failures = [results[r] for r in sorted(results) if not results[r].ok]
    for replica in sorted(results):
        result = results[replica]
        metrics.record_replica(result.ok, config.n_iterations)
        metrics.record_stages(result.stage_ms)
        if not result.ok:
            log.log_replica_failure(result.replica, result.seed, result.error)

    if len(failures) > config.max_failure_fraction * config.n_replicas or len(failures) == len(results):
        log.log_event("run_failed", "FAILED", "ERROR", {"failed": len(failures), "total": len(results)})
        metrics.write(run_dir / METRICS_FILE)
        raise ExperimentFailed(len(failures), len(results))

    records = [record for replica in sorted(results) for record in results[replica].records]
    log.log_records(records)

    summary = summarize_qualities(_qualities(records), len(failures), _alternative(config))
    for iteration, mean in zip(summary.iterations, summary.mean):
        metrics.set_quality(iteration, mean)
    if summary.improvement_ratio is not None:
        metrics.set_improvement(summary.improvement_ratio)
    if summary.test.degenerate:
        log.log_event("paired_test", "DEGENERATE", "WARNING", {"t": summary.test.t, "p": summary.test.p})
    _write_summary(run_dir, summary)
    metrics.write(run_dir / METRICS_FILE)
    log.log_event("run_finished", "COMPLETED", metadata={"improvement_ratio": summary.improvement_ratio,
                                                          "failed": len(failures)})
    return ExperimentOutcome(summary, run_dir, failures=failures)


def summarize(run_dir, alternative: Optional[str] = None) -> SummaryStats:
    """Re-aggregate a results file into summary statistics."""
    records = read_records(run_dir)
    if alternative is None:
        alternative = "greater" if records and records[0].get("mode") == "neural" else "two-sided"
    return summarize_qualities(_qualities(records), alternative=alternative)
