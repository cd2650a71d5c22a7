"""
Tests for User Behavior Logs
============================
"""

import sys
import tempfile
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import chisquare

sys.path.insert(0, str(Path(__file__).parent.parent))

from core.errors import InvariantViolation
from core.mdp import Policy, RewardModel, TabularSystem, Trajectory, validate_trajectory, value_iteration
from tabular.behavior import (
    BehaviorType,
    DegenerateNoiseWarning,
    accrued_features,
    adversarial_policy,
    dump_trajectories,
    generate_log,
    load_trajectories,
    log_digest,
    mix_behaviors,
    noisy_policy,
    sample_trajectories,
    score_trajectories,
)
from tabular.world import WorldConfig, sample_reward, sample_system

CONFIG = WorldConfig(n_states=10, n_actions=3, connection_factor=3, seed=21)


@pytest.fixture
def world():
    system, reward = sample_system(CONFIG), sample_reward(CONFIG)
    _, optimal = value_iteration(system, reward, 0.9)
    return system, reward, optimal


class TestBehaviorType:
    @pytest.mark.parametrize("label,kind,nf", [
        ("irl-labelled", "irl-labelled", 0.0),
        ("Optimal", "optimal", 0.0),
        ("suboptimal-0.2-mb", "mb", 0.2),
        ("SubOptimal-0.6-NB", "nb", 0.6),
    ])
    def test_parse(self, label, kind, nf):
        behavior = BehaviorType.parse(label)
        assert (behavior.kind, behavior.noise_factor) == (kind, nf)

    def test_label_round_trip(self):
        assert BehaviorType.parse("suboptimal-0.6-mb").label == "suboptimal-0.6-mb"

    def test_unknown_label(self):
        with pytest.raises(ValueError):
            BehaviorType.parse("expert")

    def test_noise_factor_range(self):
        with pytest.raises(ValueError):
            BehaviorType("nb", 1.5)


class TestSampling:
    """Trajectory sampling."""

    def test_lengths_and_feasibility(self, world):
        system, _, optimal = world
        trajectories = sample_trajectories(system, optimal, 50, 5, 9, seed=1)
        assert len(trajectories) == 50
        for trajectory in trajectories:
            assert 5 <= len(trajectory) <= 9
            validate_trajectory(trajectory, system)

    def test_fixed_length(self, world):
        system, _, optimal = world
        assert {len(t) for t in sample_trajectories(system, optimal, 20, 7, 7, seed=2)} == {7}

    def test_deterministic(self, world):
        system, _, optimal = world
        a = sample_trajectories(system, optimal, 10, 3, 6, seed=3)
        b = sample_trajectories(system, optimal, 10, 3, 6, seed=3)
        assert a == b

    def test_prefix_stable(self, world):
        """Trajectory i does not depend on how many are drawn."""
        system, _, optimal = world
        assert sample_trajectories(system, optimal, 5, 3, 6, seed=4) == \
            sample_trajectories(system, optimal, 12, 3, 6, seed=4)[:5]

    def test_length_and_start_frequencies(self, world):
        """Lengths are uniform on [len_min, len_max] and starts follow D0 (chi-square, p > 0.001)."""
        system, _, optimal = world
        flat_start = TabularSystem(system.connectivity, system.transition, np.full(10, 0.1))
        log = sample_trajectories(flat_start, optimal, 5000, 2, 6, seed=14)
        lengths = np.bincount([len(t) for t in log], minlength=7)[2:]
        starts = np.bincount([t.states[0] for t in log], minlength=10)
        assert chisquare(lengths).pvalue > 1e-3
        assert chisquare(starts).pvalue > 1e-3

    def test_start_frequencies_follow_skewed_d0(self, world):
        system, _, optimal = world
        d0 = np.array([0.4, 0.3, 0.2, 0.1] + [0.0] * 6)
        skewed = TabularSystem(system.connectivity, system.transition, d0)
        starts = np.bincount([t.states[0] for t in sample_trajectories(skewed, optimal, 4000, 1, 1, seed=15)],
                             minlength=10)
        assert starts[4:].sum() == 0
        assert chisquare(starts[:4], 4000 * d0[:4]).pvalue > 1e-3

    def test_bad_lengths(self, world):
        system, _, optimal = world
        with pytest.raises(InvariantViolation):
            sample_trajectories(system, optimal, 5, 6, 3, seed=0)

    def test_deterministic_policy_actions(self, world):
        """A deterministic user always takes its policy's action."""
        system, _, optimal = world
        best = np.argmax(optimal.probs, axis=1)
        for trajectory in sample_trajectories(system, optimal, 20, 4, 8, seed=5):
            assert all(a == best[s] for s, a in trajectory.steps)


class TestSuboptimalBehavior:
    def test_mb_zero_noise_equals_optimal(self, world):
        """NF = 0 mixes in nothing."""
        system, _, optimal = world
        assert mix_behaviors(system, optimal, 0.0, 30, 4, 8, seed=6) == \
            sample_trajectories(system, optimal, 30, 4, 8, seed=6)

    def test_mb_adversarial_share(self, world):
        """ceil(NF * count) trajectories follow the adversarial policy."""
        system, _, optimal = world
        worst = np.argmax(adversarial_policy(optimal).probs, axis=1)
        best = np.argmax(optimal.probs, axis=1)
        log = mix_behaviors(system, optimal, 0.2, 50, 6, 6, seed=7)
        adversarial = [t for t in log if all(a == worst[s] for s, a in t.steps)
                       and not all(a == best[s] for s, a in t.steps)]
        assert len(adversarial) == 10

    def test_mb_full_noise(self, world):
        system, _, optimal = world
        worst = np.argmax(adversarial_policy(optimal).probs, axis=1)
        for trajectory in mix_behaviors(system, optimal, 1.0, 10, 3, 5, seed=8):
            assert all(a == worst[s] for s, a in trajectory.steps)

    def test_adversarial_policy_takes_least_likely_action(self):
        policy = Policy(np.array([[0.7, 0.2, 0.1], [0.4, 0.3, 0.3]]))
        np.testing.assert_array_equal(np.argmax(adversarial_policy(policy).probs, axis=1), [2, 1])

    def test_nb_probabilities(self):
        """1 - NF on the argmax, NF / (A - 1) elsewhere."""
        policy = Policy(np.array([[0.1, 0.9, 0.0, 0.0]]))
        np.testing.assert_allclose(noisy_policy(policy, 0.6).probs, [[0.2, 0.4, 0.2, 0.2]])

    def test_nb_zero_noise_equals_optimal(self, world):
        """NF = 0 leaves the optimal policy untouched, so the logs agree."""
        system, reward, optimal = world
        np.testing.assert_array_equal(noisy_policy(optimal, 0.0).probs, optimal.probs)
        assert generate_log("suboptimal-0.0-nb", system, optimal, reward, 0.9, 25, 3, 6, seed=16) == \
            generate_log("optimal", system, optimal, reward, 0.9, 25, 3, 6, seed=16)

    def test_nb_single_action_warns(self):
        with pytest.warns(DegenerateNoiseWarning):
            policy = noisy_policy(Policy(np.ones((3, 1))), 0.2)
        np.testing.assert_array_equal(policy.probs, np.ones((3, 1)))


class TestScoring:
    def test_accrued_features(self):
        psi = accrued_features(Trajectory((0, 1, 0), (0, 0, 0)), 0.5, np.eye(2))
        np.testing.assert_allclose(psi, [1.25, 0.5])

    def test_scores_are_discounted_returns(self, world):
        system, reward, optimal = world
        scored = score_trajectories(sample_trajectories(system, optimal, 5, 3, 5, seed=9), reward, 0.9)
        for trajectory in scored:
            expected = sum(0.9 ** t * reward.weights[s] for t, s in enumerate(trajectory.states))
            assert trajectory.score == pytest.approx(expected, abs=1e-12)

    def test_scores_are_linear_in_theta(self, world):
        """score(a * theta1 + b * theta2) = a * score(theta1) + b * score(theta2)."""
        system, reward, optimal = world
        log = sample_trajectories(system, optimal, 10, 3, 7, seed=17)
        other = RewardModel(np.linspace(-1.0, 1.0, 10))
        mixed = RewardModel(2.0 * reward.weights - 0.5 * other.weights)

        def scores(model):
            return np.array([t.score for t in score_trajectories(log, model, 0.9)])

        np.testing.assert_allclose(scores(mixed), 2.0 * scores(reward) - 0.5 * scores(other), atol=1e-12)

    def test_generate_log_scores_only_labelled(self, world):
        system, reward, optimal = world
        labelled = generate_log("irl-labelled", system, optimal, reward, 0.9, 5, 3, 4, seed=10)
        unlabelled = generate_log("optimal", system, optimal, reward, 0.9, 5, 3, 4, seed=10)
        assert all(t.score is not None for t in labelled)
        assert all(t.score is None for t in unlabelled)
        assert [t.states for t in labelled] == [t.states for t in unlabelled]


class TestSerialization:
    def test_dump_and_load(self, world):
        system, reward, optimal = world
        log = generate_log("irl-labelled", system, optimal, reward, 0.9, 8, 2, 5, seed=11)
        with tempfile.TemporaryDirectory() as tmpdir:
            path = dump_trajectories(log, Path(tmpdir) / "log.jsonl")
            assert load_trajectories(path) == log

    def test_digest_changes_with_content(self, world):
        system, _, optimal = world
        a = sample_trajectories(system, optimal, 5, 3, 5, seed=12)
        b = sample_trajectories(system, optimal, 5, 3, 5, seed=13)
        assert log_digest(a) == log_digest(list(a))
        assert log_digest(a) != log_digest(b)
