"""
Tabular MDP Core
================
Finite interactive systems, user policies, linear rewards and the exact
solvers (policy evaluation, value iteration, soft value iteration) used by the
optimizer, plus the brute-force trajectory enumerator the test suites use as
ground truth.

Return convention: the return of a trajectory is sum_t gamma^t r(S_t), counting
the start state at weight 1.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from core.errors import ConvergenceError, EnumerationTooLarge, InvariantViolation

logger = logging.getLogger(__name__)

STOCHASTIC_ATOL = 1e-9
DEFAULT_TOLERANCE = 1e-8
ENUMERATION_LIMIT = 10**6


def _frozen(values, dtype=np.float64) -> np.ndarray:
    array = np.array(values, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


def check_stochastic(table: np.ndarray, name: str) -> None:
    """Raise InvariantViolation unless every row of `table` is a distribution."""
    if not np.all(np.isfinite(table)):
        raise InvariantViolation(f"{name} has non-finite entries")
    if np.any(table < 0):
        raise InvariantViolation(f"{name} has negative entries")
    deviation = np.max(np.abs(table.sum(axis=-1) - 1.0))
    if deviation > STOCHASTIC_ATOL:
        raise InvariantViolation(f"{name} rows deviate from 1 by {deviation:.3e}")


def _check_gamma(gamma: float) -> None:
    if not 0.0 < gamma < 1.0:
        raise InvariantViolation(f"discount factor must lie in (0, 1), got {gamma}")


@dataclass(frozen=True, eq=False)
class TabularSystem:
    """
    A finite interactive system.

    `connectivity[s, a]` lists the cf allowed next states (sorted, distinct);
    `transition[s, a, s']` may only put mass on them. The connectivity graph never
    changes; a new transition table is installed with `with_transition`.
    """

    connectivity: np.ndarray
    transition: np.ndarray
    initial_dist: np.ndarray
    features: Optional[np.ndarray] = None

    def __post_init__(self):
        connectivity = np.sort(np.asarray(self.connectivity, dtype=np.int64), axis=-1)
        transition = np.asarray(self.transition, dtype=np.float64)
        if transition.ndim != 3 or transition.shape[0] != transition.shape[2]:
            raise InvariantViolation(f"transition must have shape (S, A, S), got {transition.shape}")
        n_states = transition.shape[0]
        features = np.eye(n_states) if self.features is None else self.features

        object.__setattr__(self, "connectivity", _frozen(connectivity, np.int64))
        object.__setattr__(self, "transition", _frozen(transition))
        object.__setattr__(self, "initial_dist", _frozen(self.initial_dist))
        object.__setattr__(self, "features", _frozen(features))
        self.validate()

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def connection_factor(self) -> int:
        return self.connectivity.shape[2]

    @property
    def support(self) -> np.ndarray:
        """Boolean mask (S, A, S) of transitions allowed by the graph."""
        mask = np.zeros(self.transition.shape, dtype=bool)
        s_idx, a_idx = np.indices(self.connectivity.shape[:2])
        mask[s_idx[..., None], a_idx[..., None], self.connectivity] = True
        return mask

    def validate(self) -> None:
        n_states, n_actions = self.n_states, self.n_actions
        if self.connectivity.ndim != 3 or self.connectivity.shape[:2] != (n_states, n_actions):
            raise InvariantViolation(
                f"connectivity must have shape ({n_states}, {n_actions}, cf), "
                f"got {self.connectivity.shape}"
            )
        if self.connection_factor < 1:
            raise InvariantViolation("every (state, action) needs at least one next state")
        if self.connectivity.min() < 0 or self.connectivity.max() >= n_states:
            raise InvariantViolation("connectivity references unknown states")
        if np.any(np.diff(self.connectivity, axis=-1) == 0):
            raise InvariantViolation("connectivity lists must hold distinct states")

        check_stochastic(self.transition, "transition")
        if np.any(self.transition[~self.support] > 0):
            raise InvariantViolation("transition puts mass outside the connectivity graph")

        if self.initial_dist.shape != (n_states,):
            raise InvariantViolation("initial distribution has the wrong length")
        check_stochastic(self.initial_dist, "initial distribution")

        if self.features.ndim != 2 or self.features.shape[0] != n_states:
            raise InvariantViolation("features must have one row per state")

    def with_transition(self, transition: np.ndarray) -> "TabularSystem":
        """Same system (graph, D0, features) with a new transition table."""
        return TabularSystem(
            connectivity=self.connectivity,
            transition=transition,
            initial_dist=self.initial_dist,
            features=self.features,
        )

    def state_transition(self, policy: "Policy") -> np.ndarray:
        """State-to-state matrix P[s, s'] = sum_a pi(a|s) T(s'|s, a)."""
        _check_policy(self, policy)
        return np.einsum("sa,sat->st", policy.probs, self.transition)


@dataclass(frozen=True, eq=False)
class RewardModel:
    """Linear reward r(s) = weights . phi(s)."""

    weights: np.ndarray
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        weights = _frozen(self.weights)
        if weights.ndim != 1:
            raise InvariantViolation("reward weights must be a vector")
        if not np.all(np.isfinite(weights)):
            raise InvariantViolation("reward weights must be finite")
        object.__setattr__(self, "weights", weights)

    def state_rewards(self, features: np.ndarray) -> np.ndarray:
        if features.shape[1] != self.weights.shape[0]:
            raise InvariantViolation(
                f"reward has {self.weights.shape[0]} weights for {features.shape[1]} features"
            )
        return features @ self.weights

    def normalized(self) -> "RewardModel":
        """Min-max map of the weights onto [0, 1]; constant weights map to zero."""
        low, high = self.weights.min(), self.weights.max()
        span = high - low
        scaled = np.zeros_like(self.weights) if span <= 0 else (self.weights - low) / span
        return RewardModel(scaled, metadata={**self.metadata, "normalized": True})


@dataclass(frozen=True, eq=False)
class Policy:
    """Stochastic policy table probs[s, a]."""

    probs: np.ndarray

    def __post_init__(self):
        probs = _frozen(self.probs)
        if probs.ndim != 2:
            raise InvariantViolation("policy table must be two-dimensional")
        check_stochastic(probs, "policy")
        object.__setattr__(self, "probs", probs)

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.probs.shape[1]

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "Policy":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    @classmethod
    def greedy(cls, scores: np.ndarray) -> "Policy":
        """One-hot policy on argmax of `scores` per row, lowest index on ties."""
        probs = np.zeros_like(scores, dtype=np.float64)
        probs[np.arange(scores.shape[0]), np.argmax(scores, axis=1)] = 1.0
        return cls(probs)


def _check_policy(system: TabularSystem, policy: Policy) -> None:
    if policy.probs.shape != (system.n_states, system.n_actions):
        raise InvariantViolation(
            f"policy shape {policy.probs.shape} does not match system "
            f"({system.n_states}, {system.n_actions})"
        )


@dataclass(frozen=True)
class Trajectory:
    """Alternating state/action sequence, optionally scored."""

    states: Tuple[int, ...]
    actions: Tuple[int, ...]
    score: Optional[float] = None

    def __post_init__(self):
        states = tuple(int(s) for s in self.states)
        actions = tuple(int(a) for a in self.actions)
        if len(states) != len(actions) or not states:
            raise InvariantViolation("a trajectory needs one action per state and at least one step")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "actions", actions)

    def __len__(self) -> int:
        return len(self.states)

    @property
    def steps(self) -> Tuple[Tuple[int, int], ...]:
        return tuple(zip(self.states, self.actions))

    def flat(self) -> List[int]:
        """[s0, a0, s1, a1, ...]"""
        return [x for step in self.steps for x in step]

    def with_score(self, score: float) -> "Trajectory":
        return Trajectory(self.states, self.actions, float(score))


def validate_trajectory(
    trajectory: Trajectory,
    system: TabularSystem,
    min_len: Optional[int] = None,
    max_len: Optional[int] = None,
) -> None:
    length = len(trajectory)
    if min_len is not None and length < min_len:
        raise InvariantViolation(f"trajectory length {length} below {min_len}")
    if max_len is not None and length > max_len:
        raise InvariantViolation(f"trajectory length {length} above {max_len}")
    states, actions = trajectory.states, trajectory.actions
    if max(states) >= system.n_states or max(actions) >= system.n_actions:
        raise InvariantViolation("trajectory references unknown states or actions")
    for t in range(length - 1):
        if states[t + 1] not in system.connectivity[states[t], actions[t]]:
            raise InvariantViolation(
                f"step {t}: {states[t + 1]} is not reachable from ({states[t]}, {actions[t]})"
            )


def _stop_threshold(tolerance: float, gamma: float) -> float:
    # Sweep residual that bounds the distance to the fixed point by `tolerance`.
    return tolerance * (1.0 - gamma) / gamma


def policy_value(
    system: TabularSystem,
    policy: Policy,
    reward: RewardModel,
    gamma: float,
    tolerance: float = DEFAULT_TOLERANCE,
    max_iters: int = 100_000,
) -> np.ndarray:
    """
    Solve V = r + gamma * P_pi V by Richardson sweeps.

    Args:
        system: The interactive system.
        policy: User policy evaluated on it.
        reward: Reward model; r(s) = theta . phi(s).
        gamma: Discount factor in (0, 1).
        tolerance: Max-norm distance to the exact solution.

    Returns:
        State values V.
    """
    _check_gamma(gamma)
    rewards = reward.state_rewards(system.features)
    state_transition = system.state_transition(policy)
    threshold = _stop_threshold(tolerance, gamma)

    values = np.zeros(system.n_states)
    residual = np.inf
    for _ in range(max_iters):
        updated = rewards + gamma * state_transition @ values
        residual = np.max(np.abs(updated - values))
        values = updated
        if residual <= threshold:
            return values
    raise ConvergenceError("policy evaluation", residual, max_iters)


def finite_horizon_value(
    system: TabularSystem,
    policy: Policy,
    reward: RewardModel,
    gamma: float,
    horizon: int,
) -> np.ndarray:
    """Expected return of trajectories holding exactly `horizon` states."""
    if horizon < 1:
        raise InvariantViolation("horizon must be at least 1")
    rewards = reward.state_rewards(system.features)
    state_transition = system.state_transition(policy)
    values = rewards.copy()
    for _ in range(horizon - 1):
        values = rewards + gamma * state_transition @ values
    return values


def expected_state_value(
    system: TabularSystem,
    policy: Policy,
    reward: RewardModel,
    gamma: float,
) -> float:
    """D0-weighted state value; with the optimal policy this is the system quality."""
    return float(system.initial_dist @ policy_value(system, policy, reward, gamma))


def _q_values(system: TabularSystem, rewards: np.ndarray, gamma: float, values: np.ndarray) -> np.ndarray:
    n_states, n_actions = system.n_states, system.n_actions
    flat = system.transition.reshape(n_states * n_actions, n_states)
    return rewards[:, None] + gamma * (flat @ values).reshape(n_states, n_actions)


def value_iteration(
    system: TabularSystem,
    reward: RewardModel,
    gamma: float,
    tolerance: float = DEFAULT_TOLERANCE,
    max_iters: int = 10_000,
) -> Tuple[np.ndarray, Policy]:
    """Optimal values and the greedy optimal policy (lowest action index on ties)."""
    _check_gamma(gamma)
    rewards = reward.state_rewards(system.features)
    threshold = _stop_threshold(tolerance, gamma)

    values = np.zeros(system.n_states)
    residual = np.inf
    for _ in range(max_iters):
        updated = _q_values(system, rewards, gamma, values).max(axis=1)
        residual = np.max(np.abs(updated - values))
        values = updated
        if residual <= threshold:
            break
    else:
        raise ConvergenceError("value iteration", residual, max_iters)

    return values, Policy.greedy(_q_values(system, rewards, gamma, values))


def soft_q_values(
    system: TabularSystem,
    reward: RewardModel,
    gamma: float,
    values: np.ndarray,
) -> np.ndarray:
    """Q(s, a) = r(s) + gamma * sum_s' T(s'|s, a) V(s')."""
    return _q_values(system, reward.state_rewards(system.features), gamma, values)


def soft_value_iteration(
    system: TabularSystem,
    reward: RewardModel,
    gamma: float,
    tolerance: float = DEFAULT_TOLERANCE,
    max_iters: int = 10_000,
    temperature: float = 1.0,
) -> Tuple[np.ndarray, Policy]:
    """
    Soft value iteration with log-sum-exp backups.

    Iterates V(s) = tau * log sum_a exp(Q(s, a) / tau) from zero until the
    max-norm change drops below `tolerance`; the policy is
    pi(a|s) = exp((Q(s, a) - V(s)) / tau), renormalized per row.

    Returns:
        (soft values, softmax policy)
    """
    _check_gamma(gamma)
    if tolerance <= 0:
        raise InvariantViolation("tolerance must be positive")
    if temperature <= 0:
        raise InvariantViolation("temperature must be positive")
    rewards = reward.state_rewards(system.features)

    values = np.zeros(system.n_states)
    residual = np.inf
    for _ in range(max_iters):
        q = _q_values(system, rewards, gamma, values)
        updated = temperature * logsumexp(q / temperature, axis=1)
        residual = np.max(np.abs(updated - values))
        values = updated
        if residual < tolerance:
            break
    else:
        raise ConvergenceError("soft value iteration", residual, max_iters)

    q = _q_values(system, rewards, gamma, values)
    logits = (q - q.max(axis=1, keepdims=True)) / temperature
    probs = np.exp(logits)
    probs /= probs.sum(axis=1, keepdims=True)
    return values, Policy(probs)


def enumerate_returns(
    system: TabularSystem,
    reward: RewardModel,
    gamma: float,
    horizon: int,
    policy: Optional[Policy] = None,
    start: Optional[int] = None,
    limit: int = ENUMERATION_LIMIT,
) -> Dict[Trajectory, Tuple[float, float]]:
    """
    Exhaustively enumerate every feasible trajectory holding `horizon` states.

    Args:
        policy: User policy weighting actions; uniform when omitted.
        start: Fix the start state (weights are then conditional on it);
            otherwise starts are weighted by D0.

    Returns:
        Map trajectory -> (probability weight, discounted return).
    """
    if horizon < 1:
        raise InvariantViolation("horizon must be at least 1")
    policy = policy or Policy.uniform(system.n_states, system.n_actions)
    _check_policy(system, policy)

    starts = [start] if start is not None else list(range(system.n_states))
    n_actions, cf = system.n_actions, system.connection_factor
    count = len(starts) * n_actions**horizon * cf ** (horizon - 1)
    if count > limit:
        raise EnumerationTooLarge(count, limit)

    rewards = reward.state_rewards(system.features)
    discounts = gamma ** np.arange(horizon)
    results: Dict[Trajectory, Tuple[float, float]] = {}

    def extend(states: List[int], actions: List[int], weight: float) -> None:
        s = states[-1]
        for a in range(n_actions):
            w = weight * policy.probs[s, a]
            if len(states) == horizon:
                trajectory = Trajectory(tuple(states), tuple(actions + [a]))
                ret = float(discounts @ rewards[list(states)])
                results[trajectory] = (w, ret)
                continue
            for s_next in system.connectivity[s, a]:
                extend(states + [int(s_next)], actions + [a], w * system.transition[s, a, s_next])

    for s0 in starts:
        extend([s0], [], 1.0 if start is not None else float(system.initial_dist[s0]))
    logger.debug("enumerated %d trajectories of horizon %d", len(results), horizon)
    return results
