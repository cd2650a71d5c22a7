"""
Tests for Stage Timing and Run Metrics
======================================
"""

import sys
import tempfile
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from monitoring.metrics import RunMetrics
from monitoring.performance import StageTimer


class TestStageTimer:
    """Tests for StageTimer class."""

    def test_initialization(self):
        """Test timer initializes empty."""
        timer = StageTimer(slow_threshold_ms=100.0)
        assert timer.slow_threshold_ms == 100.0
        assert len(timer.metrics) == 0

    def test_record_stage(self):
        """Test recording a duration."""
        timer = StageTimer()
        timer.record("irl", 50.0)
        assert timer.metrics["irl"] == [50.0]
        assert timer.last_ms("irl") == 50.0

    def test_last_ms_of_unknown_stage(self):
        assert StageTimer().last_ms("never") == 0.0

    def test_slow_stage_detection(self):
        """Test that slow stages are flagged."""
        timer = StageTimer(slow_threshold_ms=100.0)
        timer.record("user_solve", 50.0)
        timer.record("mdp_plus_solve", 150.0, {"iteration": 3})
        assert len(timer.slow_stages) == 1
        assert timer.slow_stages[0].name == "mdp_plus_solve"
        assert timer.slow_stages[0].metadata == {"iteration": 3}

    def test_stage_context(self):
        """Test the stage context manager, including nested stages."""
        timer = StageTimer()
        with timer.stage("iteration"):
            with timer.stage("evaluate"):
                time.sleep(0.01)
        assert timer.last_ms("evaluate") >= 10
        assert timer.last_ms("iteration") >= timer.last_ms("evaluate")

    def test_stage_records_on_error(self):
        """Test a failing stage still records its duration."""
        timer = StageTimer()
        with pytest.raises(RuntimeError):
            with timer.stage("irl"):
                raise RuntimeError("diverged")
        assert len(timer.metrics["irl"]) == 1


class TestRunMetrics:
    """Tests for the Prometheus textfile export."""

    def test_write_textfile(self):
        metrics = RunMetrics("tabular")
        metrics.record_replica(True, n_iterations=30)
        metrics.record_replica(False)
        metrics.record_stages({"irl": [1500.0, 500.0], "evaluate": [2.0]})
        metrics.set_quality(0, 1.5)
        metrics.set_improvement(2.0)
        with tempfile.TemporaryDirectory() as tmpdir:
            text = metrics.write(Path(tmpdir) / "metrics.prom").read_text()
        assert 'iso_replicas_total{mode="tabular",outcome="ok"} 1.0' in text
        assert 'iso_replicas_total{mode="tabular",outcome="failed"} 1.0' in text
        assert 'iso_iterations_total{mode="tabular"} 30.0' in text
        assert 'iso_stage_duration_seconds_count{stage="irl"} 2.0' in text
        assert 'iso_mean_quality{mode="tabular",iteration="0"} 1.5' in text
        assert 'iso_improvement_ratio{mode="tabular"} 2.0' in text

    def test_registries_are_private(self):
        """Two runs in one process do not share counters."""
        a, b = RunMetrics("neural"), RunMetrics("neural")
        a.record_replica(True, 3)
        with tempfile.TemporaryDirectory() as tmpdir:
            text = b.write(Path(tmpdir) / "metrics.prom").read_text()
        assert 'iso_iterations_total{mode="neural"}' not in text
