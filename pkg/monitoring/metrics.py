"""
ISO Run Metrics
===============
Prometheus metrics of one experiment run, kept in a private registry and
written as a textfile (`metrics.prom`) next to the results.
"""

from pathlib import Path
from typing import Dict, List, Union

from prometheus_client import CollectorRegistry, Counter, Gauge, Histogram, write_to_textfile

STAGE_BUCKETS = (0.001, 0.01, 0.05, 0.1, 0.5, 1.0, 5.0, 10.0, 60.0, 300.0, 1800.0)


class RunMetrics:
    """Counters, gauges and a stage-duration histogram for one run."""

    def __init__(self, mode: str = "tabular"):
        self.registry = CollectorRegistry()
        self.mode = mode
        self.iterations = Counter(
            "iso_iterations", "ISO iterations completed", ["mode"], registry=self.registry
        )
        self.replicas = Counter(
            "iso_replicas", "Replicas finished, by outcome", ["mode", "outcome"], registry=self.registry
        )
        self.stage_seconds = Histogram(
            "iso_stage_duration_seconds", "Wall time of optimizer stages", ["stage"],
            buckets=STAGE_BUCKETS, registry=self.registry,
        )
        self.quality = Gauge(
            "iso_mean_quality", "Mean quality over replicas per iteration", ["mode", "iteration"],
            registry=self.registry,
        )
        self.improvement = Gauge(
            "iso_improvement_ratio", "Final over initial mean quality", ["mode"], registry=self.registry
        )

    def record_replica(self, succeeded: bool, n_iterations: int = 0) -> None:
        self.replicas.labels(self.mode, "ok" if succeeded else "failed").inc()
        if succeeded:
            self.iterations.labels(self.mode).inc(n_iterations)

    def record_stages(self, stage_ms: Dict[str, List[float]]) -> None:
        """Observe per-stage durations (ms), as collected by a StageTimer."""
        for name, durations in stage_ms.items():
            for duration_ms in durations:
                self.stage_seconds.labels(name).observe(duration_ms / 1000.0)

    def set_quality(self, iteration: int, value: float) -> None:
        self.quality.labels(self.mode, str(iteration)).set(value)

    def set_improvement(self, ratio: float) -> None:
        self.improvement.labels(self.mode).set(ratio)

    def write(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        write_to_textfile(str(path), self.registry)
        return path
