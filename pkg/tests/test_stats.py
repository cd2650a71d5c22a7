"""
Tests for Replica Statistics
============================
"""

import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from harness.stats import SummaryStats, paired_t_test, standard_error, summarize_qualities

BEFORE = (1.0, 1.5, 2.0, 2.5)
AFTER = (2.0, 2.2, 3.1, 3.3)


class TestPairedTTest:
    """The paired t-test between initial and final quality."""

    def test_hand_computed(self):
        """Differences (1.0, 0.7, 1.1, 0.8): mean 0.9, sd sqrt(0.1 / 3), df 3."""
        result = paired_t_test(BEFORE, AFTER)
        t = 0.9 / (math.sqrt(0.1 / 3) / 2)
        assert result.t == pytest.approx(t, rel=1e-9)
        assert result.t == pytest.approx(9.859, abs=1e-3)
        assert result.df == 3
        # two-sided tail of Student's t with 3 degrees of freedom
        x = t / math.sqrt(3)
        expected_p = 1 - (2 / math.pi) * (x / (1 + x ** 2) + math.atan(x))
        assert result.p == pytest.approx(expected_p, rel=1e-6)
        assert not result.degenerate

    def test_one_sided_halves_p(self):
        two_sided = paired_t_test(BEFORE, AFTER)
        greater = paired_t_test(BEFORE, AFTER, alternative="greater")
        assert greater.p == pytest.approx(two_sided.p / 2)
        assert greater.alternative == "greater"

    def test_single_pair_is_undefined(self):
        result = paired_t_test([1.0], [2.0])
        assert (result.t, result.p, result.df) == (None, None, None)
        assert result.degenerate

    def test_zero_differences(self):
        result = paired_t_test([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        assert (result.t, result.p) == (0.0, 1.0)
        assert result.degenerate

    def test_constant_nonzero_differences(self):
        result = paired_t_test([1.0, 2.0, 3.0], [1.5, 2.5, 3.5])
        assert result.t == math.inf
        assert result.p == 0.0
        assert result.degenerate
        worse = paired_t_test([1.0, 2.0], [0.5, 1.5], alternative="greater")
        assert worse.t == -math.inf and worse.p == 1.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            paired_t_test([1.0, 2.0], [1.0])


class TestSummaries:
    def test_standard_error(self):
        assert standard_error([2.0]) == 0.0
        assert standard_error([1.0, 3.0]) == pytest.approx(1.0)

    def test_per_iteration_aggregates(self):
        summary = summarize_qualities({0: [1.0, 2.0, 4.0], 1: [3.0, 4.0, 4.0]})
        assert summary.iterations == [0, 1, 2]
        assert summary.mean == [2.0, 3.0, 4.0]
        assert summary.sem == pytest.approx([1.0, 1.0, 0.0])
        assert summary.n == [2, 2, 2]
        assert summary.improvement_ratio == pytest.approx(2.0)

    def test_replica_order_is_irrelevant(self):
        traces = {0: [1.0, 2.0], 1: [1.5, 2.2], 2: [2.0, 3.1]}
        shuffled = {2: traces[2], 0: traces[0], 1: traces[1]}
        assert summarize_qualities(traces).to_dict() == summarize_qualities(shuffled).to_dict()

    def test_zero_initial_quality(self):
        summary = summarize_qualities({0: [0.0, 1.0], 1: [0.0, 2.0]})
        assert summary.improvement_ratio is None

    def test_single_replica_without_iterations(self):
        """One replica, iteration 0 only: ratio 1 and an undefined test."""
        summary = summarize_qualities({0: [1.7]})
        assert summary.improvement_ratio == 1.0
        assert summary.test.p is None and summary.test.degenerate

    def test_round_trip(self):
        summary = summarize_qualities(dict(enumerate(zip(BEFORE, AFTER))), n_failed=1)
        restored = SummaryStats.from_dict(summary.to_dict())
        assert restored == summary
        assert restored.n_failed == 1

    def test_requires_replicas(self):
        with pytest.raises(ValueError):
            summarize_qualities({})

    def test_traces_must_align(self):
        with pytest.raises(ValueError):
            summarize_qualities({0: np.ones(3), 1: np.ones(2)})
