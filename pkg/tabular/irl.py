"""
Tabular Reward Recovery
=======================
MaxEnt-IRL for unscored logs and DM-IRL regression for scored logs.

The MaxEnt model scores a trajectory of L states as
    P(zeta | theta, s0, L) = exp(theta . f_zeta) / Z_L(s0)
with undiscounted feature counts f_zeta, normalized over the feasible
trajectories (every step on the support of T) with the same start state and
length. Equal feature counts get equal probability whatever the dynamics
weights. The learning signal weights (s0, L) by their empirical frequencies
in the log, so the gradient below is the exact log-likelihood gradient.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
import scipy.linalg

from core.errors import InvariantViolation, LearningFailure
from core.mdp import RewardModel, TabularSystem, Trajectory
from tabular.behavior import accrued_features

logger = logging.getLogger(__name__)

DEFAULT_HORIZON = 40
DEFAULT_LEARNING_RATE = 0.05
DEFAULT_ITERS = 300
DM_IRL_RIDGE = 1e-10


def _check_log(trajectories: Sequence[Trajectory], horizon: int) -> None:
    if not trajectories:
        raise InvariantViolation("reward learning needs at least one trajectory")
    longest = max(len(t) for t in trajectories)
    if longest > horizon:
        raise InvariantViolation(f"horizon {horizon} shorter than the longest trajectory ({longest})")


@dataclass(frozen=True)
class LogStatistics:
    """theta-free summaries of a log, built once per fit."""

    visits: np.ndarray        # mean visits per state
    start_mass: np.ndarray    # (horizon + 1, S): share of trajectories of length L starting in s

    @classmethod
    def from_log(cls, trajectories: Sequence[Trajectory], n_states: int, horizon: int) -> "LogStatistics":
        _check_log(trajectories, horizon)
        all_states = np.fromiter((s for t in trajectories for s in t.states), dtype=np.int64)
        firsts = np.fromiter((t.states[0] for t in trajectories), dtype=np.int64, count=len(trajectories))
        lengths = np.fromiter((len(t) for t in trajectories), dtype=np.int64, count=len(trajectories))
        visits = np.bincount(all_states, minlength=n_states).astype(np.float64) / len(trajectories)
        start_mass = np.zeros((horizon + 1, n_states))
        np.add.at(start_mass, (lengths, firsts), 1.0 / len(trajectories))
        return cls(visits=visits, start_mass=start_mass)


def empirical_feature_counts(trajectories: Sequence[Trajectory], features: np.ndarray) -> np.ndarray:
    """Mean undiscounted feature counts sum_t phi(S_t) over the log."""
    horizon = max(len(t) for t in trajectories) if trajectories else 0
    return LogStatistics.from_log(trajectories, features.shape[0], horizon).visits @ features


def _support_counts(system: TabularSystem) -> np.ndarray:
    """(S * A, S) indicator of feasible successors."""
    n_states, n_actions = system.n_states, system.n_actions
    return (system.transition > 0).astype(np.float64).reshape(n_states * n_actions, n_states)


def _log_partitions(theta: np.ndarray, system: TabularSystem, horizon: int) -> np.ndarray:
    """log Z_k(s) for k = 1..horizon remaining states (row 0 unused)."""
    n_states, n_actions = system.n_states, system.n_actions
    rewards = system.features @ theta
    support = _support_counts(system)

    log_z = np.zeros((horizon + 1, n_states))
    log_z[1] = rewards + np.log(n_actions)
    for k in range(2, horizon + 1):
        shift = log_z[k - 1].max()
        weights = (support @ np.exp(log_z[k - 1] - shift)).reshape(n_states, n_actions).sum(axis=1)
        log_z[k] = rewards + np.log(weights) + shift
    return log_z


def maxent_step_policies(theta: np.ndarray, system: TabularSystem, horizon: int) -> np.ndarray:
    """
    Local action probabilities of the MaxEnt model (the backward pass).

    Returns:
        Array (horizon + 1, S, A); entry k is P(a | s, k states remaining).
    """
    n_states, n_actions = system.n_states, system.n_actions
    log_z = _log_partitions(theta, system, horizon)
    support = _support_counts(system)
    policies = np.full((horizon + 1, n_states, n_actions), 1.0 / n_actions)
    for k in range(2, horizon + 1):
        shift = log_z[k - 1].max()
        weights = (support @ np.exp(log_z[k - 1] - shift)).reshape(n_states, n_actions)
        policies[k] = weights / weights.sum(axis=1, keepdims=True)
    return policies


def _successor_kernels(theta: np.ndarray, system: TabularSystem, log_z: np.ndarray) -> np.ndarray:
    """M_k[s, s'] = P(S_{t+1} = s' | S_t = s, k remaining) under the model."""
    horizon = log_z.shape[0] - 1
    rewards = system.features @ theta
    paths = _support_counts(system).reshape(system.n_states, system.n_actions, system.n_states).sum(axis=1)
    reachable = paths > 0
    kernels = np.zeros((horizon + 1, system.n_states, system.n_states))
    for k in range(2, horizon + 1):
        log_ratio = log_z[k - 1][None, :] + rewards[:, None] - log_z[k][:, None]
        kernels[k][reachable] = paths[reachable] * np.exp(log_ratio[reachable])
    return kernels


def _model_visits(theta: np.ndarray, system: TabularSystem, start_mass: np.ndarray) -> np.ndarray:
    horizon = start_mass.shape[0] - 1
    log_z = _log_partitions(theta, system, horizon)
    kernels = _successor_kernels(theta, system, log_z)
    mass = start_mass
    visits = np.zeros(system.n_states)
    for _ in range(horizon):
        visits += mass[1:].sum(axis=0)
        moved = np.zeros_like(mass)
        moved[1:horizon] = np.einsum("ks,kst->kt", mass[2:], kernels[2:])
        mass = moved
        if not mass.any():
            break
    return visits


def model_feature_counts(
    theta: np.ndarray,
    trajectories: Sequence[Trajectory],
    system: TabularSystem,
    horizon: int = DEFAULT_HORIZON,
    statistics: Optional[LogStatistics] = None,
) -> np.ndarray:
    """
    Expected feature counts under the model (the forward pass), started from
    the log's empirical (length, first state) frequencies.
    """
    statistics = statistics or LogStatistics.from_log(trajectories, system.n_states, horizon)
    return _model_visits(theta, system, statistics.start_mass) @ system.features


def maxent_gradient(
    theta: np.ndarray,
    trajectories: Sequence[Trajectory],
    system: TabularSystem,
    horizon: int = DEFAULT_HORIZON,
    statistics: Optional[LogStatistics] = None,
) -> np.ndarray:
    """Empirical minus model feature counts (gradient of the mean log-likelihood)."""
    statistics = statistics or LogStatistics.from_log(trajectories, system.n_states, horizon)
    model = _model_visits(theta, system, statistics.start_mass)
    return (statistics.visits - model) @ system.features


def maxent_log_prob(theta: np.ndarray, trajectory: Trajectory, system: TabularSystem, horizon: int) -> float:
    """log P(zeta | theta, s0, L); -inf for a trajectory leaving the support."""
    _check_log([trajectory], horizon)
    states, actions = trajectory.states, trajectory.actions
    if any(system.transition[states[t], actions[t], states[t + 1]] <= 0 for t in range(len(states) - 1)):
        return float("-inf")
    log_z = _log_partitions(theta, system, horizon)
    rewards = system.features @ theta
    return float(rewards[list(states)].sum() - log_z[len(states), states[0]])


def maxent_log_likelihood(
    theta: np.ndarray,
    trajectories: Sequence[Trajectory],
    system: TabularSystem,
    horizon: int = DEFAULT_HORIZON,
) -> float:
    """Mean log-likelihood of a feasible log."""
    _check_log(trajectories, horizon)
    log_z = _log_partitions(theta, system, horizon)
    rewards = system.features @ theta
    total = sum(rewards[list(t.states)].sum() - log_z[len(t), t.states[0]] for t in trajectories)
    return float(total / len(trajectories))


def maxent_irl(
    trajectories: Sequence[Trajectory],
    system: TabularSystem,
    horizon: int = DEFAULT_HORIZON,
    learning_rate: float = DEFAULT_LEARNING_RATE,
    iters: int = DEFAULT_ITERS,
    divergence_window: int = 20,
) -> RewardModel:
    """
    Fit theta by gradient ascent on the MaxEnt log-likelihood, from zero.

    Raises:
        LearningFailure: if the gradient norm grows tenfold over
            `divergence_window` iterations or theta becomes non-finite.
    """
    statistics = LogStatistics.from_log(trajectories, system.n_states, horizon)
    theta = np.zeros(system.features.shape[1])
    norms: List[float] = []

    for iteration in range(iters):
        gradient = maxent_gradient(theta, trajectories, system, horizon, statistics=statistics)
        norm = float(np.linalg.norm(gradient))
        norms.append(norm)
        if not np.isfinite(norm):
            raise LearningFailure("non-finite MaxEnt gradient", {"iteration": iteration})
        if (
            iteration >= divergence_window
            and norm > 1e-3
            and norm > 10.0 * norms[iteration - divergence_window]
        ):
            raise LearningFailure(
                "MaxEnt gradient norm grew tenfold",
                {
                    "iteration": iteration,
                    "grad_norms": norms[-divergence_window - 1:],
                    "theta": theta.tolist(),
                    "learning_rate": learning_rate,
                },
            )
        theta = theta + learning_rate * gradient
        if not np.all(np.isfinite(theta)):
            raise LearningFailure("MaxEnt weights became non-finite", {"iteration": iteration})

    logger.debug("MaxEnt-IRL finished: %d iterations, final gradient norm %.3e", iters, norms[-1] if norms else 0.0)
    return RewardModel(
        theta,
        metadata={
            "method": "maxent",
            "horizon": horizon,
            "learning_rate": learning_rate,
            "iters": iters,
            "final_grad_norm": norms[-1] if norms else 0.0,
        },
    )


def dm_irl(
    scored_trajectories: Sequence[Trajectory],
    gamma: float,
    n_states: Optional[int] = None,
    features: Optional[np.ndarray] = None,
    ridge: float = DM_IRL_RIDGE,
    prior: Optional[np.ndarray] = None,
) -> RewardModel:
    """
    Regress theta from trajectory scores: score(zeta) = theta . psi(zeta).

    Full-rank designs use ridge-damped normal equations; rank-deficient ones
    return the least-squares solution closest to `prior` (zero by default)
    with `rank_deficient` set in the metadata. Directions the log does not
    identify, such as states no trajectory visits, keep the prior's values.
    """
    if not scored_trajectories:
        raise InvariantViolation("DM-IRL needs at least one scored trajectory")
    if any(t.score is None for t in scored_trajectories):
        raise InvariantViolation("DM-IRL needs every trajectory to carry a score")
    if features is None:
        n_states = n_states or 1 + max(max(t.states) for t in scored_trajectories)
        features = np.eye(n_states)

    design = np.stack([accrued_features(t, gamma, features) for t in scored_trajectories])
    scores = np.array([t.score for t in scored_trajectories])
    n_features = design.shape[1]
    rank = int(np.linalg.matrix_rank(design))
    if prior is None:
        prior = np.zeros(n_features)
    elif prior.shape != (n_features,):
        raise InvariantViolation(f"prior has {prior.shape[0]} weights for {n_features} features")
    residual = scores - design @ prior

    metadata: Dict[str, object] = {"method": "dm-irl", "rank": rank, "ridge": ridge}
    if rank == n_features:
        gram = design.T @ design + ridge * np.eye(n_features)
        theta = prior + scipy.linalg.solve(gram, design.T @ residual, assume_a="pos")
        metadata["rank_deficient"] = False
    else:
        theta = prior + scipy.linalg.lstsq(design, residual)[0]
        metadata["rank_deficient"] = True
        logger.warning("DM-IRL design has rank %d < %d; unidentified weights keep their prior", rank, n_features)
    return RewardModel(theta, metadata=metadata)
