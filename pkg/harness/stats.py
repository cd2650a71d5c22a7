"""
Replica Statistics
==================
Per-iteration aggregates over replicas and the paired t-test between initial
and final quality.
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Literal, Optional, Sequence

import numpy as np
from scipy import stats

logger = logging.getLogger(__name__)

Alternative = Literal["two-sided", "greater"]


@dataclass(frozen=True)
class PairedTestResult:
    """t statistic, p-value and degrees of freedom; None where undefined."""
    t: Optional[float]
    p: Optional[float]
    df: Optional[int]
    degenerate: bool = False
    alternative: str = "two-sided"


def paired_t_test(
    before: Sequence[float],
    after: Sequence[float],
    alternative: Alternative = "two-sided",
) -> PairedTestResult:
    """
    Paired t-test on after - before.

    Fewer than two pairs give an undefined, degenerate result. Constant
    differences give t = 0, p = 1 (two-sided) when they are zero and an
    infinite t with p = 0 otherwise, all flagged degenerate.
    """
    before = np.asarray(before, dtype=np.float64)
    after = np.asarray(after, dtype=np.float64)
    if before.shape != after.shape:
        raise ValueError("paired samples must have the same length")
    n = before.size
    if n < 2:
        return PairedTestResult(None, None, None, degenerate=True, alternative=alternative)

    diffs = after - before
    df = n - 1
    if np.all(diffs == diffs[0]):
        if diffs[0] == 0:
            p = 1.0 if alternative == "two-sided" else 0.5
            return PairedTestResult(0.0, p, df, degenerate=True, alternative=alternative)
        t = float(np.copysign(np.inf, diffs[0]))
        p = 0.0 if alternative == "two-sided" or t > 0 else 1.0
        return PairedTestResult(t, p, df, degenerate=True, alternative=alternative)

    result = stats.ttest_rel(after, before, alternative=alternative)
    return PairedTestResult(float(result.statistic), float(result.pvalue), df, alternative=alternative)


def standard_error(values: Sequence[float]) -> float:
    """Sample std (ddof=1) over sqrt(n); 0 for fewer than two values."""
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        return 0.0
    return float(values.std(ddof=1) / np.sqrt(values.size))


@dataclass
class SummaryStats:
    iterations: List[int]
    mean: List[float]
    sem: List[float]
    n: List[int]
    initial_mean: float
    final_mean: float
    improvement_ratio: Optional[float]
    test: PairedTestResult
    n_replicas: int
    n_failed: int = 0
    extra: Dict[str, object] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, object]) -> "SummaryStats":
        data = dict(data)
        data["test"] = PairedTestResult(**data["test"])
        return cls(**data)


def summarize_qualities(
    qualities: Dict[int, Sequence[float]],
    n_failed: int = 0,
    alternative: Alternative = "two-sided",
) -> SummaryStats:
    """
    Aggregate per-replica quality traces.

    Args:
        qualities: replica index -> quality per iteration (iteration 0 first).
    """
    if not qualities:
        raise ValueError("no successful replicas to summarize")
    replicas = sorted(qualities)
    traces = np.array([qualities[r] for r in replicas], dtype=np.float64)
    initial, final = traces[:, 0], traces[:, -1]
    initial_mean = float(initial.mean())
    final_mean = float(final.mean())
    ratio = final_mean / initial_mean if initial_mean != 0 else None
    test = paired_t_test(initial, final, alternative)
    if test.degenerate:
        logger.warning("paired t-test is degenerate over %d replicas", len(replicas))
    return SummaryStats(
        iterations=list(range(traces.shape[1])),
        mean=[float(m) for m in traces.mean(axis=0)],
        sem=[standard_error(traces[:, k]) for k in range(traces.shape[1])],
        n=[len(replicas)] * traces.shape[1],
        initial_mean=initial_mean,
        final_mean=final_mean,
        improvement_ratio=ratio,
        test=test,
        n_replicas=len(replicas),
        n_failed=n_failed,
    )
