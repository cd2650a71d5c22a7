"""
Interactive System Optimizer
============================
The role swap: the system becomes the agent of MDP+, whose states are user
(state, action) pairs, whose actions are next states allowed by the
connectivity graph, and whose dynamics are the user policy. Solving MDP+
yields a new transition table for the original system.

`run_iso` repeats: log user behavior under the current system, recover the
reward, re-solve the user, optimize the system, measure quality under the
true reward.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from core.errors import ConvergenceError, InvariantViolation, ISOError
from core.mdp import (
    DEFAULT_TOLERANCE,
    Policy,
    RewardModel,
    TabularSystem,
    check_stochastic,
    expected_state_value,
    soft_value_iteration,
    value_iteration,
)
from monitoring.performance import StageTimer
from tabular.behavior import BehaviorType, generate_log, log_digest, score_trajectories
from tabular.irl import dm_irl, maxent_irl
from tabular.world import WorldConfig, sample_reward, sample_system

logger = logging.getLogger(__name__)

IrlMethod = Literal["maxent", "dm-irl", "oracle"]
UserSolver = Literal["soft", "greedy"]


class IsoSettings(BaseModel):
    """Knobs of one tabular ISO run."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    gamma: float = Field(0.9, gt=0.0, lt=1.0)
    n_trajectories: int = Field(2000, ge=1)
    len_min: int = Field(30, ge=1)
    len_max: int = Field(40, ge=1)
    maxent_horizon: int = Field(40, ge=1)
    maxent_learning_rate: float = Field(0.05, gt=0.0)
    maxent_iters: int = Field(300, ge=1)
    user_solver: UserSolver = "soft"
    tolerance: float = Field(DEFAULT_TOLERANCE, gt=0.0)
    normalize_recovered: bool = True

    @model_validator(mode="after")
    def _lengths_fit(self) -> "IsoSettings":
        if self.len_min > self.len_max:
            raise ValueError("len_min must not exceed len_max")
        if self.maxent_horizon < self.len_max:
            raise ValueError("maxent_horizon must cover the longest trajectory")
        return self


@dataclass(frozen=True, eq=False)
class ReformulatedMDP:
    """
    MDP+ of a system under a fixed user policy.

    Composite state (s, a) has index s * n_actions + a. Taking action s' (one of
    `successors[s, a]`) moves to (s', a') with probability user_policy[s', a'].
    """

    successors: np.ndarray
    user_policy: np.ndarray
    reward_plus: np.ndarray
    initial_plus: np.ndarray
    gamma: float

    def __post_init__(self):
        n_states, n_actions = self.user_policy.shape
        if self.successors.shape[:2] != (n_states, n_actions) or self.successors.shape[2] < 1:
            raise InvariantViolation("every composite state needs a non-empty action set")
        check_stochastic(self.user_policy, "T+")
        check_stochastic(self.initial_plus, "D0+")
        if self.reward_plus.shape != (n_states * n_actions,):
            raise InvariantViolation("r+ needs one entry per composite state")

    @property
    def n_states(self) -> int:
        return self.user_policy.shape[0]

    @property
    def n_actions(self) -> int:
        return self.user_policy.shape[1]

    @property
    def n_states_plus(self) -> int:
        return self.n_states * self.n_actions

    @property
    def states_plus(self) -> List[Tuple[int, int]]:
        return [(s, a) for s in range(self.n_states) for a in range(self.n_actions)]

    def index(self, state: int, action: int) -> int:
        return state * self.n_actions + action

    def actions_plus(self, state: int, action: int) -> np.ndarray:
        return self.successors[state, action]

    def transition_plus(self, state: int, action: int, next_state: int) -> np.ndarray:
        """T+(. | (s, a), s') as a distribution over composite states."""
        if next_state not in self.successors[state, action]:
            raise InvariantViolation(f"{next_state} is not an action of composite ({state}, {action})")
        row = np.zeros(self.n_states_plus)
        row[next_state * self.n_actions:(next_state + 1) * self.n_actions] = self.user_policy[next_state]
        return row

    def state_values(self, values_plus: np.ndarray) -> np.ndarray:
        """W(s) = sum_a pi(a|s) V+((s, a))."""
        return (self.user_policy * values_plus.reshape(self.n_states, self.n_actions)).sum(axis=1)


@dataclass(frozen=True, eq=False)
class MdpPlusSolution:
    policy: Policy
    values: np.ndarray
    residual: float
    sweeps: int


def build_mdp_plus(
    system: TabularSystem,
    user_policy: Policy,
    reward: RewardModel,
    gamma: float,
) -> ReformulatedMDP:
    """Swap agent and environment: the user policy becomes the dynamics."""
    if user_policy.probs.shape != (system.n_states, system.n_actions):
        raise InvariantViolation("user policy does not match the system")
    rewards = reward.state_rewards(system.features)
    return ReformulatedMDP(
        successors=system.connectivity,
        user_policy=user_policy.probs,
        reward_plus=np.repeat(rewards, system.n_actions),
        initial_plus=(system.initial_dist[:, None] * user_policy.probs).ravel(),
        gamma=gamma,
    )


def solve_mdp_plus(
    mdp_plus: ReformulatedMDP,
    gamma: Optional[float] = None,
    tolerance: float = DEFAULT_TOLERANCE,
    max_iters: int = 10_000,
) -> MdpPlusSolution:
    """
    Value iteration on MDP+ over the allowed next states; the returned system
    policy is greedy with the lowest next-state index on ties.
    """
    gamma = mdp_plus.gamma if gamma is None else gamma
    threshold = tolerance * (1.0 - gamma) / gamma
    successors = mdp_plus.successors

    values = np.zeros(mdp_plus.n_states_plus)
    residual = np.inf
    sweeps = 0
    for sweeps in range(1, max_iters + 1):
        reachable = mdp_plus.state_values(values)[successors]
        updated = mdp_plus.reward_plus + gamma * reachable.max(axis=-1).ravel()
        residual = float(np.max(np.abs(updated - values)))
        values = updated
        if residual <= threshold:
            break
    else:
        raise ConvergenceError("MDP+ value iteration", residual, max_iters)

    reachable = mdp_plus.state_values(values)[successors]
    choice = np.take_along_axis(successors, np.argmax(reachable, axis=-1)[..., None], axis=-1).ravel()
    probs = np.zeros((mdp_plus.n_states_plus, mdp_plus.n_states))
    probs[np.arange(mdp_plus.n_states_plus), choice] = 1.0
    return MdpPlusSolution(Policy(probs), values, residual, sweeps)


def system_as_policy_plus(system: TabularSystem) -> Policy:
    """The transition table read as a system policy over composite states."""
    return Policy(system.transition.reshape(system.n_states * system.n_actions, system.n_states))


def evaluate_policy_plus(
    mdp_plus: ReformulatedMDP,
    policy_plus: Policy,
    tolerance: float = DEFAULT_TOLERANCE,
    max_iters: int = 100_000,
) -> np.ndarray:
    """V+ of a fixed system policy in MDP+."""
    gamma = mdp_plus.gamma
    threshold = tolerance * (1.0 - gamma) / gamma
    values = np.zeros(mdp_plus.n_states_plus)
    residual = np.inf
    for _ in range(max_iters):
        updated = mdp_plus.reward_plus + gamma * policy_plus.probs @ mdp_plus.state_values(values)
        residual = float(np.max(np.abs(updated - values)))
        values = updated
        if residual <= threshold:
            return values
    raise ConvergenceError("MDP+ policy evaluation", residual, max_iters)


def mdp_plus_return(mdp_plus: ReformulatedMDP, policy_plus: Policy) -> float:
    """D0+-weighted value of a system policy."""
    return float(mdp_plus.initial_plus @ evaluate_policy_plus(mdp_plus, policy_plus))


def extract_transition(policy_plus: Policy, system: TabularSystem) -> TabularSystem:
    """T*(s'|s, a) = pi+(s' | (s, a)); graph, D0 and features are kept."""
    n_states, n_actions = system.n_states, system.n_actions
    if policy_plus.probs.shape != (n_states * n_actions, n_states):
        raise InvariantViolation("system policy does not match the system")
    return system.with_transition(policy_plus.probs.reshape(n_states, n_actions, n_states))


def solve_user(
    system: TabularSystem,
    reward: RewardModel,
    gamma: float,
    solver: UserSolver = "soft",
    tolerance: float = DEFAULT_TOLERANCE,
) -> Policy:
    """The user's policy: soft value iteration, or its greedy zero-temperature limit."""
    if solver == "soft":
        return soft_value_iteration(system, reward, gamma, tolerance)[1]
    return value_iteration(system, reward, gamma, tolerance)[1]


def system_quality(system: TabularSystem, true_reward: RewardModel, gamma: float) -> float:
    """Expected state value under the optimal user policy for the true reward."""
    _, optimal = value_iteration(system, true_reward, gamma)
    return expected_state_value(system, optimal, true_reward, gamma)


@dataclass(frozen=True, eq=False)
class IsoStep:
    system: TabularSystem
    user_policy: Policy
    quality: float
    diagnostics: Dict[str, Any] = field(default_factory=dict)


def iso_iteration(
    system: TabularSystem,
    reward: RewardModel,
    gamma: float,
    true_reward: Optional[RewardModel] = None,
    user_solver: UserSolver = "soft",
    tolerance: float = DEFAULT_TOLERANCE,
    timer: Optional[StageTimer] = None,
) -> IsoStep:
    """
    One pass of the optimizer with reward `reward`.

    Solves the user under the current system, builds and solves MDP+, installs
    the extracted transition table, and scores the new system under the TRUE
    reward (`reward` when no true reward is given). The returned user policy is
    the user's re-optimized policy on the new system.
    """
    true_reward = true_reward or reward
    timer = timer or StageTimer()

    with timer.stage("user_solve"):
        user_policy = solve_user(system, reward, gamma, user_solver, tolerance)
    with timer.stage("mdp_plus_solve"):
        mdp_plus = build_mdp_plus(system, user_policy, reward, gamma)
        solution = solve_mdp_plus(mdp_plus, tolerance=tolerance)
        optimized = extract_transition(solution.policy, system)
    with timer.stage("evaluate"):
        quality = system_quality(optimized, true_reward, gamma)
        next_user = solve_user(optimized, true_reward, gamma, user_solver, tolerance)

    return IsoStep(
        system=optimized,
        user_policy=next_user,
        quality=quality,
        diagnostics={"mdp_plus_residual": solution.residual, "mdp_plus_sweeps": solution.sweeps},
    )


@dataclass
class IterationRecord:
    """Outcome of one ISO iteration (iteration 0 is the initial system)."""
    iteration: int
    theta: Optional[List[float]]
    quality: float
    behavior: str
    irl_method: str
    wall_ms: float = 0.0
    diagnostics: Dict[str, Any] = field(default_factory=dict)


def iteration_seed(seed: int, iteration: int) -> int:
    return int(np.random.SeedSequence([seed, iteration]).generate_state(1, np.uint64)[0])


def recover_reward(
    irl_method: IrlMethod,
    trajectories,
    system: TabularSystem,
    true_reward: RewardModel,
    settings: IsoSettings,
    previous: Optional[RewardModel] = None,
) -> RewardModel:
    """
    Reward used by the optimizer in one iteration. DM-IRL starts from the
    `previous` estimate, so weights the current log cannot identify carry over.
    """
    if irl_method == "oracle":
        return true_reward
    if irl_method == "dm-irl":
        if any(t.score is None for t in trajectories):
            trajectories = score_trajectories(trajectories, true_reward, settings.gamma, system.features)
        prior = None if previous is None else previous.weights
        return dm_irl(trajectories, settings.gamma, features=system.features, prior=prior)
    recovered = maxent_irl(
        trajectories,
        system,
        horizon=settings.maxent_horizon,
        learning_rate=settings.maxent_learning_rate,
        iters=settings.maxent_iters,
    )
    return recovered.normalized() if settings.normalize_recovered else recovered


def run_iso(
    world_config: WorldConfig,
    behavior: Union[BehaviorType, str],
    irl_method: IrlMethod,
    n_iterations: int,
    seed: int,
    settings: Optional[IsoSettings] = None,
    timer: Optional[StageTimer] = None,
    on_reward: Optional[Callable[[int, RewardModel, str], None]] = None,
) -> List[IterationRecord]:
    """
    The full tabular loop on one sampled world.

    Args:
        world_config: World to sample; its graph and true reward stay fixed.
        behavior: Dataset type the users produce each iteration.
        irl_method: maxent, dm-irl or oracle (true reward).
        n_iterations: Number of recover-then-optimize iterations.
        seed: Seed of the per-iteration interaction logs.
        on_reward: Called with (iteration, recovered reward, log digest).

    Returns:
        n_iterations + 1 records; record 0 is the initial system.
    """
    settings = settings or IsoSettings()
    timer = timer or StageTimer()
    behavior = BehaviorType.parse(behavior) if isinstance(behavior, str) else behavior
    if n_iterations < 0:
        raise ValueError("n_iterations must be non-negative")

    system = sample_system(world_config)
    true_reward = sample_reward(world_config)
    gamma = settings.gamma

    with timer.stage("iteration"):
        quality = system_quality(system, true_reward, gamma)
    records = [IterationRecord(0, None, quality, behavior.label, irl_method, timer.last_ms("iteration"))]
    logger.info("world seed=%d initial quality %.4f", world_config.seed, quality)
    reward: Optional[RewardModel] = None

    for iteration in range(1, n_iterations + 1):
        try:
            with timer.stage("iteration"):
                with timer.stage("user_solve"):
                    user_policy = solve_user(system, true_reward, gamma, settings.user_solver, settings.tolerance)
                with timer.stage("behavior"):
                    log = generate_log(
                        behavior, system, user_policy, true_reward, gamma,
                        settings.n_trajectories, settings.len_min, settings.len_max,
                        iteration_seed(seed, iteration),
                    )
                with timer.stage("irl"):
                    reward = recover_reward(irl_method, log, system, true_reward, settings, previous=reward)
                if on_reward is not None:
                    on_reward(iteration, reward, log_digest(log))
                step = iso_iteration(
                    system, reward, gamma, true_reward, settings.user_solver, settings.tolerance, timer
                )
        except ISOError as exc:
            exc.iteration = iteration
            exc.args = (f"iteration {iteration}: {exc}",) + exc.args[1:]
            logger.error("ISO iteration %d failed: %s", iteration, exc)
            raise

        if np.any(step.system.transition[~system.support] > 0):
            raise InvariantViolation(f"iteration {iteration}: optimized system left the connectivity graph")
        system = step.system
        records.append(IterationRecord(
            iteration=iteration,
            theta=reward.weights.tolist(),
            quality=step.quality,
            behavior=behavior.label,
            irl_method=irl_method,
            wall_ms=timer.last_ms("iteration"),
            diagnostics={**step.diagnostics, **{k: v for k, v in reward.metadata.items() if k != "theta"}},
        ))
        logger.debug("iteration %d quality %.4f", iteration, step.quality)

    return records
