"""
Tests for Experiment Configuration
==================================
"""

import os
import sys
import tempfile
from pathlib import Path

import pytest
from pydantic import ValidationError

sys.path.insert(0, str(Path(__file__).parent.parent))

from harness.config import (
    ExperimentConfig,
    apply_overrides,
    config_hash,
    load_config,
    load_environment,
    save_config,
)


class TestExperimentConfig:
    def test_defaults(self):
        config = ExperimentConfig()
        assert (config.n_iterations, config.n_replicas) == (30, 10)
        assert config.iso.gamma == 0.9
        assert config.world.n_states == 64

    def test_behavior_label_is_normalized(self):
        config = ExperimentConfig(behavior="SubOptimal-0.2-NB")
        assert config.behavior == "suboptimal-0.2-nb"
        assert config.behavior_type.noise_factor == 0.2

    def test_unknown_behavior(self):
        with pytest.raises(ValidationError):
            ExperimentConfig(behavior="expert")

    def test_unknown_field(self):
        with pytest.raises(ValidationError):
            ExperimentConfig(replicas=3)

    def test_save_and_load(self):
        config = ExperimentConfig(n_replicas=3, behavior="suboptimal-0.6-mb", irl_method="dm-irl")
        with tempfile.TemporaryDirectory() as tmpdir:
            path = save_config(config, Path(tmpdir) / "nested" / "exp.json")
            assert load_config(path) == config


class TestOverrides:
    """`--set dotted.key=value` handling."""

    def test_nested_values(self):
        config = apply_overrides(ExperimentConfig(), [
            "world.connection_factor=4",
            "iso.user_solver=greedy",
            "neural.lambda_kl=0.1",
            "irl_method=oracle",
        ])
        assert config.world.connection_factor == 4
        assert config.iso.user_solver == "greedy"
        assert config.neural.lambda_kl == 0.1
        assert config.irl_method == "oracle"

    def test_json_values(self):
        config = apply_overrides(ExperimentConfig(), ["neural.hidden=[32, 32]", "save_rewards=true"])
        assert config.neural.hidden == (32, 32)
        assert config.save_rewards is True

    def test_original_is_unchanged(self):
        config = ExperimentConfig()
        apply_overrides(config, ["n_replicas=2"])
        assert config.n_replicas == 10

    def test_malformed_override(self):
        with pytest.raises(ValueError):
            apply_overrides(ExperimentConfig(), ["n_replicas"])

    def test_unknown_section(self):
        with pytest.raises(ValueError):
            apply_overrides(ExperimentConfig(), ["nothing.seed=1"])

    def test_invalid_value(self):
        """Validation errors surface before any compute."""
        with pytest.raises(ValidationError):
            apply_overrides(ExperimentConfig(), ["world.connection_factor=100"])


class TestConfigHash:
    def test_stable(self):
        assert config_hash(ExperimentConfig()) == config_hash(ExperimentConfig())
        assert len(config_hash(ExperimentConfig())) == 64

    def test_changes_with_semantics(self):
        assert config_hash(ExperimentConfig()) != config_hash(ExperimentConfig(n_iterations=5))
        assert config_hash(ExperimentConfig()) != config_hash(
            apply_overrides(ExperimentConfig(), ["iso.maxent_iters=10"])
        )

    def test_ignores_runtime_knobs(self):
        """Output location and pool size do not change results."""
        assert config_hash(ExperimentConfig()) == config_hash(ExperimentConfig(output="/tmp/x", workers=4))


class TestEnvironment:
    def test_reads_env_file(self, monkeypatch):
        monkeypatch.delenv("ISO_WORKERS", raising=False)
        monkeypatch.delenv("ISO_RESULTS_DIR", raising=False)
        with tempfile.TemporaryDirectory() as tmpdir:
            env_file = Path(tmpdir) / ".env"
            env_file.write_text("ISO_WORKERS=3\nISO_RESULTS_DIR=/data/iso\n")
            settings = load_environment(env_file)
        os.environ.pop("ISO_WORKERS", None)
        os.environ.pop("ISO_RESULTS_DIR", None)
        assert settings.workers == 3
        assert settings.results_dir == "/data/iso"

    def test_process_environment_wins(self, monkeypatch):
        monkeypatch.setenv("ISO_WORKERS", "2")
        with tempfile.TemporaryDirectory() as tmpdir:
            env_file = Path(tmpdir) / ".env"
            env_file.write_text("ISO_WORKERS=8\n")
            assert load_environment(env_file).workers == 2

    def test_defaults(self, monkeypatch, tmp_path):
        monkeypatch.delenv("ISO_WORKERS", raising=False)
        monkeypatch.delenv("ISO_RESULTS_DIR", raising=False)
        settings = load_environment(tmp_path / "missing.env")
        assert (settings.workers, settings.results_dir) == (1, "results")
