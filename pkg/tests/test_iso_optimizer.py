"""
Tests for the Interactive System Optimizer
==========================================
"""

import sys
from pathlib import Path

import numpy as np
import pytest
from pydantic import ValidationError

sys.path.insert(0, str(Path(__file__).parent.parent))

from core.errors import ConvergenceError, InvariantViolation
from core.mdp import Policy, RewardModel, TabularSystem, policy_value, soft_value_iteration, value_iteration
from monitoring.performance import StageTimer
from tabular.iso import (
    IsoSettings,
    build_mdp_plus,
    evaluate_policy_plus,
    extract_transition,
    iso_iteration,
    mdp_plus_return,
    run_iso,
    solve_mdp_plus,
    system_as_policy_plus,
    system_quality,
)
from tabular.world import WorldConfig, sample_reward, sample_system


def world(seed: int, n_states: int = 4, n_actions: int = 2, cf: int = 2):
    config = WorldConfig(n_states=n_states, n_actions=n_actions, connection_factor=cf, seed=seed)
    return sample_system(config), sample_reward(config)


def random_policy(n_states: int, n_actions: int, seed: int) -> Policy:
    return Policy(np.random.default_rng(seed).dirichlet(np.ones(n_actions), size=n_states))


class TestBuildMdpPlus:
    """Construction of the role-swapped MDP."""

    def test_composite_state_count(self):
        system, reward = sample_system(WorldConfig(seed=1)), sample_reward(WorldConfig(seed=1))
        mdp_plus = build_mdp_plus(system, Policy.uniform(64, 4), reward, 0.9)
        assert mdp_plus.n_states_plus == 256
        assert len(mdp_plus.states_plus) == 256

    def test_uniform_user_gives_uniform_rows(self):
        system, reward = world(2)
        mdp_plus = build_mdp_plus(system, Policy.uniform(4, 2), reward, 0.9)
        for s, a in mdp_plus.states_plus:
            for s_next in mdp_plus.actions_plus(s, a):
                row = mdp_plus.transition_plus(s, a, s_next)
                np.testing.assert_array_equal(row[row > 0], [0.5, 0.5])
                assert row.sum() == pytest.approx(1.0)

    def test_transition_plus_reads_user_policy(self):
        system, reward = world(3)
        policy = random_policy(4, 2, seed=3)
        mdp_plus = build_mdp_plus(system, policy, reward, 0.9)
        s_next = int(system.connectivity[1, 0, 0])
        row = mdp_plus.transition_plus(1, 0, s_next)
        for a_next in range(2):
            assert row[mdp_plus.index(s_next, a_next)] == policy.probs[s_next, a_next]

    def test_actions_restricted_to_graph(self):
        system, reward = world(4)
        mdp_plus = build_mdp_plus(system, Policy.uniform(4, 2), reward, 0.9)
        np.testing.assert_array_equal(mdp_plus.actions_plus(2, 1), system.connectivity[2, 1])
        outside = next(s for s in range(4) if s not in system.connectivity[2, 1])
        with pytest.raises(InvariantViolation):
            mdp_plus.transition_plus(2, 1, outside)

    def test_reward_plus_copies_state_reward(self):
        system, reward = world(5)
        mdp_plus = build_mdp_plus(system, Policy.uniform(4, 2), reward, 0.9)
        for s, a in mdp_plus.states_plus:
            assert mdp_plus.reward_plus[mdp_plus.index(s, a)] == reward.weights[s]

    def test_initial_plus_is_distribution(self):
        system, reward = world(6)
        mdp_plus = build_mdp_plus(system, random_policy(4, 2, 6), reward, 0.9)
        assert mdp_plus.initial_plus.sum() == pytest.approx(1.0)


class TestEquivalence:
    def test_returns_agree_on_random_worlds(self):
        """Return of (pi, T) in the MDP equals the return of pi+ := T in MDP+."""
        rng = np.random.default_rng(0)
        for trial in range(200):
            n_states = int(rng.integers(1, 7))
            n_actions = int(rng.integers(1, 4))
            cf = int(rng.integers(1, n_states + 1))
            system, reward = world(trial, n_states, n_actions, cf)
            reward = RewardModel(rng.normal(size=n_states))
            policy = random_policy(n_states, n_actions, seed=trial)
            direct = system.initial_dist @ policy_value(system, policy, reward, 0.9, tolerance=1e-11)
            mdp_plus = build_mdp_plus(system, policy, reward, 0.9)
            swapped = mdp_plus.initial_plus @ evaluate_policy_plus(
                mdp_plus, system_as_policy_plus(system), tolerance=1e-11
            )
            assert swapped == pytest.approx(direct, abs=1e-8)

    def test_mdp_plus_return(self):
        system, reward = world(7)
        policy = random_policy(4, 2, 7)
        mdp_plus = build_mdp_plus(system, policy, reward, 0.9)
        direct = system.initial_dist @ policy_value(system, policy, reward, 0.9)
        assert mdp_plus_return(mdp_plus, system_as_policy_plus(system)) == pytest.approx(direct, abs=2e-8)


class TestSolveMdpPlus:
    def test_constant_reward(self):
        """Any policy is optimal and V+ = r / (1 - gamma)."""
        system, _ = world(8)
        mdp_plus = build_mdp_plus(system, Policy.uniform(4, 2), RewardModel(np.full(4, 2.0)), 0.9)
        solution = solve_mdp_plus(mdp_plus)
        np.testing.assert_allclose(solution.values, 20.0, atol=1e-7)

    def test_routes_to_rewarded_state(self):
        """Every composite moves to the only rewarded state."""
        connectivity = np.tile(np.array([0, 1]), (2, 2, 1))
        transition = np.full((2, 2, 2), 0.5)
        system = TabularSystem(connectivity, transition, np.array([0.5, 0.5]))
        mdp_plus = build_mdp_plus(system, Policy.uniform(2, 2), RewardModel(np.array([0.0, 1.0])), 0.9)
        solution = solve_mdp_plus(mdp_plus)
        np.testing.assert_array_equal(solution.policy.probs, np.tile([0.0, 1.0], (4, 1)))
        np.testing.assert_allclose(solution.values, [9.0, 9.0, 10.0, 10.0], atol=1e-7)

    def test_improves_on_current_system(self):
        """V+ of the optimized policy dominates the current transition table."""
        for seed in range(10):
            system, reward = world(seed, n_states=6, n_actions=3, cf=3)
            _, user = soft_value_iteration(system, reward, 0.9)
            mdp_plus = build_mdp_plus(system, user, reward, 0.9)
            solution = solve_mdp_plus(mdp_plus, tolerance=1e-10)
            optimized = evaluate_policy_plus(mdp_plus, solution.policy, tolerance=1e-11)
            current = evaluate_policy_plus(mdp_plus, system_as_policy_plus(system), tolerance=1e-11)
            assert np.all(optimized >= current - 1e-8)

    def test_convergence_failure(self):
        system, reward = world(9)
        mdp_plus = build_mdp_plus(system, Policy.uniform(4, 2), reward, 0.9)
        with pytest.raises(ConvergenceError):
            solve_mdp_plus(mdp_plus, max_iters=2)


class TestExtractTransition:
    def test_round_trip(self):
        system, _ = world(10)
        restored = extract_transition(system_as_policy_plus(system), system)
        np.testing.assert_array_equal(restored.transition, system.transition)

    def test_deterministic_rows(self):
        system, reward = world(11)
        mdp_plus = build_mdp_plus(system, Policy.uniform(4, 2), reward, 0.9)
        optimized = extract_transition(solve_mdp_plus(mdp_plus).policy, system)
        assert np.all(optimized.transition.max(axis=-1) == 1.0)

    def test_extracted_systems_are_valid(self):
        """Graph, D0 and features are kept; support never grows."""
        for seed in range(100):
            system, reward = world(seed, n_states=5, n_actions=2, cf=3)
            mdp_plus = build_mdp_plus(system, random_policy(5, 2, seed), reward, 0.9)
            optimized = extract_transition(solve_mdp_plus(mdp_plus).policy, system)
            optimized.validate()
            np.testing.assert_array_equal(optimized.connectivity, system.connectivity)
            np.testing.assert_array_equal(optimized.initial_dist, system.initial_dist)
            assert not np.any(optimized.transition[~system.support] > 0)

    def test_shape_mismatch(self):
        system, _ = world(12)
        with pytest.raises(InvariantViolation):
            extract_transition(Policy.uniform(3, 4), system)


class TestIsoIteration:
    def test_fixed_point_without_choices(self):
        """A single successor per (s, a) leaves nothing to optimize."""
        system, reward = world(13, n_states=5, cf=1)
        step = iso_iteration(system, reward, 0.9)
        assert step.quality == pytest.approx(system_quality(system, reward, 0.9), abs=1e-6)
        np.testing.assert_array_equal(step.system.transition, system.transition)

    def test_oracle_quality_is_monotone(self):
        """With the true reward and greedy users quality never drops."""
        for seed in range(5):
            system, reward = world(seed, n_states=4, n_actions=2, cf=2)
            quality = system_quality(system, reward, 0.9)
            for _ in range(10):
                step = iso_iteration(system, reward, 0.9, user_solver="greedy")
                assert step.quality >= quality - 1e-6
                system, quality = step.system, step.quality

    def test_quality_uses_true_reward(self):
        system, reward = world(14, n_states=6, cf=3)
        inverted = RewardModel(1.0 - reward.weights)
        step = iso_iteration(system, inverted, 0.9, true_reward=reward)
        assert step.quality == pytest.approx(system_quality(step.system, reward, 0.9))

    def test_user_policy_is_reoptimized(self):
        system, reward = world(15, n_states=6, cf=3)
        step = iso_iteration(system, reward, 0.9, user_solver="greedy")
        _, expected = value_iteration(step.system, reward, 0.9)
        np.testing.assert_array_equal(step.user_policy.probs, expected.probs)

    def test_stages_are_timed(self):
        system, reward = world(16)
        timer = StageTimer()
        iso_iteration(system, reward, 0.9, timer=timer)
        assert {"user_solve", "mdp_plus_solve", "evaluate"} <= set(timer.metrics)


class TestRunIso:
    SMALL = IsoSettings(n_trajectories=200, len_min=5, len_max=8, maxent_horizon=8, maxent_iters=20)

    def test_zero_iterations(self):
        config = WorldConfig(n_states=6, n_actions=2, connection_factor=3, seed=17)
        records = run_iso(config, "optimal", "maxent", 0, seed=1, settings=self.SMALL)
        assert len(records) == 1
        assert records[0].theta is None
        expected = system_quality(sample_system(config), sample_reward(config), 0.9)
        assert records[0].quality == pytest.approx(expected)

    def test_records_per_iteration(self):
        config = WorldConfig(n_states=6, n_actions=2, connection_factor=3, seed=18)
        records = run_iso(config, "suboptimal-0.2-nb", "maxent", 2, seed=2, settings=self.SMALL)
        assert [r.iteration for r in records] == [0, 1, 2]
        assert all(len(r.theta) == 6 for r in records[1:])
        assert all(r.behavior == "suboptimal-0.2-nb" for r in records)

    def test_dm_irl_tracks_oracle(self):
        """Scored logs recover the true reward, so the trace matches the oracle run."""
        config = WorldConfig(n_states=5, n_actions=2, connection_factor=3, seed=19)
        settings = IsoSettings(n_trajectories=2000)
        oracle = run_iso(config, "irl-labelled", "oracle", 3, seed=3, settings=settings)
        recovered = run_iso(config, "irl-labelled", "dm-irl", 3, seed=3, settings=settings)
        for a, b in zip(oracle, recovered):
            assert b.quality == pytest.approx(a.quality, abs=1e-6)

    @pytest.mark.slow
    def test_dm_irl_tracks_oracle_on_full_size_world(self):
        """
        64 states, cf = 8: once the system turns deterministic the logs stop
        visiting some states, and those weights carry over from earlier
        iterations instead of dropping to zero.
        """
        config = WorldConfig(n_states=64, n_actions=4, connection_factor=8, seed=23)
        settings = IsoSettings(n_trajectories=2000)
        oracle = run_iso(config, "irl-labelled", "oracle", 3, seed=6, settings=settings)
        recovered = run_iso(config, "irl-labelled", "dm-irl", 3, seed=6, settings=settings)
        for a, b in zip(oracle, recovered):
            assert b.quality == pytest.approx(a.quality, abs=1e-6)
        np.testing.assert_allclose(recovered[-1].theta, sample_reward(config).weights, atol=1e-6)
        assert all(0 < r.diagnostics["rank"] <= 64 for r in recovered[1:])

    def test_dm_irl_carries_weights_between_iterations(self, monkeypatch):
        """Each DM-IRL call after the first starts from the previous estimate."""
        import tabular.iso as iso

        priors = []
        original = iso.dm_irl

        def recording(*args, **kwargs):
            priors.append(kwargs.get("prior"))
            return original(*args, **kwargs)

        monkeypatch.setattr(iso, "dm_irl", recording)
        config = WorldConfig(n_states=5, n_actions=2, connection_factor=3, seed=19)
        records = run_iso(config, "irl-labelled", "dm-irl", 3, seed=3, settings=self.SMALL)
        assert priors[0] is None
        for prior, record in zip(priors[1:], records[1:]):
            np.testing.assert_array_equal(prior, record.theta)

    def test_rewards_are_reported(self):
        config = WorldConfig(n_states=6, n_actions=2, connection_factor=3, seed=20)
        seen = []
        run_iso(config, "optimal", "maxent", 2, seed=4, settings=self.SMALL,
                on_reward=lambda i, reward, digest: seen.append((i, len(digest))))
        assert seen == [(1, 64), (2, 64)]

    def test_oracle_improves_quality(self):
        config = WorldConfig(n_states=8, n_actions=2, connection_factor=4, seed=21)
        records = run_iso(config, "optimal", "oracle", 5, seed=5, settings=self.SMALL)
        assert records[-1].quality > records[0].quality

    def test_settings_validation(self):
        with pytest.raises(ValidationError):
            IsoSettings(len_min=10, len_max=5)
        with pytest.raises(ValidationError):
            IsoSettings(len_max=50, maxent_horizon=40)
