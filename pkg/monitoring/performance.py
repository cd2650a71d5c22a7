"""
ISO Stage Timing
================
Wall-clock timing of optimizer stages (user solve, reward recovery, MDP+
solve, evaluation, PPO/AIRL training) with slow-stage warnings. The raw
durations feed the run's Prometheus histogram.
"""

import logging
import time
from collections import defaultdict
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Dict, Iterator, List, Optional

logger = logging.getLogger(__name__)


@dataclass
class SlowStage:
    """A stage that exceeded the slow threshold."""
    name: str
    duration_ms: float
    timestamp: str
    metadata: Dict = field(default_factory=dict)


class StageTimer:
    """
    Times named stages of a run.

    Usage:
        timer = StageTimer()
        with timer.stage("irl"):
            ...
    """

    def __init__(self, slow_threshold_ms: float = 60_000.0):
        self.slow_threshold_ms = slow_threshold_ms
        self.metrics: Dict[str, List[float]] = defaultdict(list)
        self.slow_stages: List[SlowStage] = []

    @contextmanager
    def stage(self, name: str, metadata: Optional[Dict] = None) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            self.record(name, (time.perf_counter() - start) * 1000, metadata)

    def record(self, name: str, duration_ms: float, metadata: Optional[Dict] = None):
        self.metrics[name].append(duration_ms)
        if duration_ms > self.slow_threshold_ms:
            self.slow_stages.append(SlowStage(
                name=name,
                duration_ms=duration_ms,
                timestamp=datetime.now(timezone.utc).isoformat(),
                metadata=metadata or {},
            ))
            logger.warning("slow stage %s took %.0fms", name, duration_ms)

    def last_ms(self, name: str) -> float:
        """Duration of the most recent call of a stage (0 if never run)."""
        values = self.metrics.get(name)
        return values[-1] if values else 0.0
