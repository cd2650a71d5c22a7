"""
Neural ISO Sandbox
==================
The continuous world: states in [-1, 1]^d, a discrete user action set, a
Gaussian system policy producing next states, and the ISO loop on top of
PPO and AIRL.

Setups name where the system optimizer gets its reward and its model of the
user: oracle-oracle (true reward, oracle user), airl-oracle (AIRL reward,
oracle user) and airl-airl (AIRL reward, AIRL's rebuilt user).
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from monitoring.performance import StageTimer
from neural.airl import AIRLConfig, airl_train
from neural.distributions import StochasticPolicy
from neural.envs import DEFAULT_HORIZON, StateReward, SystemEnv, UserEnv, rollout_transitions
from neural.mlp import MLP
from neural.ppo import PPOConfig, PPOTrainer

logger = logging.getLogger(__name__)

RewardMode = Literal["handcrafted", "random"]
Setup = Literal["oracle-oracle", "airl-oracle", "airl-airl"]


class NeuralConfig(BaseModel):
    """One neural ISO run."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    state_dim: int = Field(50, ge=1)
    n_actions: int = Field(10, ge=2)
    hidden: Tuple[int, ...] = (64, 64)
    horizon: int = Field(DEFAULT_HORIZON, ge=1)
    reward_mode: RewardMode = "handcrafted"
    setup: Setup = "oracle-oracle"
    lambda_kl: float = Field(0.001, ge=0.0)
    n_iterations: int = Field(3, ge=0)
    n_expert_trajectories: int = Field(20_000, ge=1)
    n_eval_trajectories: int = Field(1000, ge=1)
    user_steps: int = Field(102_400, ge=1)
    system_steps: int = Field(102_400, ge=1)
    airl_steps: Optional[int] = Field(None, ge=1)
    seed: int = Field(0, ge=0)
    ppo: PPOConfig = PPOConfig()
    airl: AIRLConfig = AIRLConfig()


class TrueReward:
    """
    r_real: handcrafted (1/d) * ||s||^2, or a fixed network with seeded
    uniform initialization.
    """

    def __init__(self, mode: RewardMode, state_dim: int, seed: int = 0, hidden: Tuple[int, ...] = (64, 64)):
        self.mode = mode
        self.state_dim = state_dim
        self.net = None
        if mode == "random":
            self.net = MLP((state_dim, *hidden, 1), seed=seed, init="uniform")

    def __call__(self, states: np.ndarray) -> np.ndarray:
        states = np.atleast_2d(states)
        if self.net is None:
            return (states ** 2).sum(axis=1) / self.state_dim
        return self.net(states).ravel()


def true_reward(state: np.ndarray, mode: RewardMode = "handcrafted", seed: int = 0) -> float:
    """r_real of one state."""
    state = np.asarray(state, dtype=np.float64)
    return float(TrueReward(mode, state.shape[-1], seed)(state)[0])


@dataclass
class NeuralSystem:
    state_dim: int
    n_actions: int
    system_policy: StochasticPolicy
    reward: TrueReward

    def with_system_policy(self, policy: StochasticPolicy) -> "NeuralSystem":
        return NeuralSystem(self.state_dim, self.n_actions, policy, self.reward)

    def user_env(self, horizon: int = DEFAULT_HORIZON) -> UserEnv:
        return UserEnv(self.system_policy, self.state_dim, self.n_actions, horizon)

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {f"system.{k}": v for k, v in self.system_policy.net.state_dict().items()}
        if self.reward.net is not None:
            state.update({f"reward.{k}": v for k, v in self.reward.net.state_dict().items()})
        return state


def _seed(seed: int, *path: int) -> int:
    return int(np.random.SeedSequence([seed, *path]).generate_state(1)[0])


def make_neural_system(config: NeuralConfig) -> NeuralSystem:
    """A randomly initialized system and the true reward of the run."""
    policy = StochasticPolicy.build(
        "gaussian", config.state_dim + config.n_actions, config.state_dim, config.hidden,
        seed=_seed(config.seed, 0), output_scale=1.0,
    )
    reward = TrueReward(config.reward_mode, config.state_dim, _seed(config.seed, 1), config.hidden)
    return NeuralSystem(config.state_dim, config.n_actions, policy, reward)


def train_user_policy(
    system: NeuralSystem,
    reward: StateReward,
    steps: int,
    ppo_config: Optional[PPOConfig] = None,
    seed: int = 0,
    horizon: int = DEFAULT_HORIZON,
    timer: Optional[StageTimer] = None,
) -> StochasticPolicy:
    """The oracle user: PPO in the original MDP under a frozen system."""
    ppo_config = ppo_config or PPOConfig()
    env = system.user_env(horizon)
    policy = StochasticPolicy.build("categorical", system.state_dim, system.n_actions, ppo_config.hidden, seed=seed)
    trainer = PPOTrainer(policy, env, ppo_config, seed)
    return trainer.train(env.lift_reward(reward), steps, timer).policy


def kl_penalized(reward_fn, initial_policy: StochasticPolicy, lambda_kl: float):
    """r - lambda * KL(current || initial) at the same composite state."""
    if lambda_kl == 0:
        return reward_fn

    def penalized(batch):
        kl = batch.dist.kl(initial_policy.distribution(batch.obs))
        return reward_fn(batch) - lambda_kl * kl

    return penalized


def optimize_system_neural(
    system: NeuralSystem,
    r_source: StateReward,
    user_policy: StochasticPolicy,
    lambda_kl: float,
    steps: int,
    ppo_config: Optional[PPOConfig] = None,
    seed: int = 0,
    horizon: int = DEFAULT_HORIZON,
    timer: Optional[StageTimer] = None,
) -> NeuralSystem:
    """
    PPO on the system policy in MDP+ against `r_source`, with a per-step KL
    penalty toward the system as it was when this call started.
    """
    env = SystemEnv(user_policy, system.state_dim, system.n_actions, horizon)
    initial = system.system_policy.copy()
    trainer = PPOTrainer(system.system_policy, env, ppo_config, seed)
    result = trainer.train(kl_penalized(env.lift_reward(r_source), initial, lambda_kl), steps, timer)
    if result.curve:
        logger.debug("system PPO finished: last mean return %.4f", result.curve[-1].mean_return)
    return system.with_system_policy(result.policy)


def mean_system_kl(
    system: NeuralSystem,
    reference: StochasticPolicy,
    user_policy: StochasticPolicy,
    n_episodes: int = 64,
    seed: int = 0,
    horizon: int = DEFAULT_HORIZON,
) -> float:
    """Mean per-step KL(system || reference) over composite states the system visits."""
    env = SystemEnv(user_policy, system.state_dim, system.n_actions, horizon)
    rng = np.random.default_rng(seed)
    obs = env.reset(n_episodes, rng)
    total = 0.0
    for _ in range(horizon):
        dist = system.system_policy.distribution(obs)
        total += float(dist.kl(reference.distribution(obs)).mean())
        obs = env.step(obs, dist.sample(rng), rng)
    return total / horizon


def average_return(
    system: NeuralSystem,
    user_policy: StochasticPolicy,
    reward: StateReward,
    n_trajectories: int,
    seed: int = 0,
    horizon: int = DEFAULT_HORIZON,
) -> Tuple[float, float]:
    """Mean and standard error of undiscounted episode returns of `user_policy`."""
    env = system.user_env(horizon)
    rng = np.random.default_rng(seed)
    obs = env.reset(n_trajectories, rng)
    returns = np.zeros(n_trajectories)
    for _ in range(horizon):
        returns += reward(obs)
        actions, _ = user_policy.act(obs, rng)
        obs = env.step(obs, actions, rng)
    sem = float(returns.std(ddof=1) / np.sqrt(n_trajectories)) if n_trajectories > 1 else 0.0
    return float(returns.mean()), sem


def evaluate_average_return(
    system: NeuralSystem,
    reward_fn: Optional[StateReward] = None,
    n_trajectories: int = 1000,
    user_policy: Optional[StochasticPolicy] = None,
    user_steps: int = 102_400,
    ppo_config: Optional[PPOConfig] = None,
    seed: int = 0,
    horizon: int = DEFAULT_HORIZON,
) -> Tuple[float, float]:
    """
    Average return of the oracle user on `system` under `reward_fn` (the
    system's true reward by default). A user is trained first unless given.
    """
    reward_fn = reward_fn or system.reward
    if user_policy is None:
        user_policy = train_user_policy(system, reward_fn, user_steps, ppo_config, _seed(seed, 2), horizon)
    return average_return(system, user_policy, reward_fn, n_trajectories, _seed(seed, 3), horizon)


@dataclass
class NeuralIterationRecord:
    iteration: int
    setup: str
    lambda_kl: float
    mean_return: float
    sem: float
    wall_ms: float = 0.0
    diagnostics: Dict[str, Any] = field(default_factory=dict)


def run_iso_neural(
    config: NeuralConfig,
    timer: Optional[StageTimer] = None,
    on_checkpoint: Optional[Callable[[int, NeuralSystem], None]] = None,
) -> List[NeuralIterationRecord]:
    """
    The neural ISO loop. Iteration 0 evaluates the random initial system; each
    later iteration collects expert logs from the oracle user, optionally runs
    AIRL, optimizes the system in MDP+ and re-evaluates with a retrained user.
    """
    timer = timer or StageTimer()
    horizon = config.horizon
    system = make_neural_system(config)

    def oracle_user(iteration: int) -> StochasticPolicy:
        with timer.stage("user_solve"):
            return train_user_policy(
                system, system.reward, config.user_steps, config.ppo, _seed(config.seed, iteration, 0), horizon, timer
            )

    def evaluate(iteration: int, user: StochasticPolicy) -> Tuple[float, float]:
        with timer.stage("evaluate"):
            mean, sem = average_return(
                system, user, system.reward, config.n_eval_trajectories, _seed(config.seed, iteration, 1), horizon
            )
        logger.info("neural %s iteration %d average return %.4f", config.setup, iteration, mean)
        return mean, sem

    with timer.stage("iteration"):
        user = oracle_user(0)
        mean, sem = evaluate(0, user)
    records = [NeuralIterationRecord(0, config.setup, config.lambda_kl, mean, sem, timer.last_ms("iteration"))]

    for iteration in range(1, config.n_iterations + 1):
        diagnostics: Dict[str, Any] = {}
        with timer.stage("iteration"):
            expert = rollout_transitions(
                system.user_env(horizon), user, config.n_expert_trajectories,
                np.random.default_rng(_seed(config.seed, iteration, 2)),
            )
            reward_source: StateReward = system.reward
            model_user = user
            if config.setup != "oracle-oracle":
                with timer.stage("irl"):
                    state = airl_train(
                        expert, system.user_env(horizon), config.airl_steps, config.airl, config.ppo,
                        _seed(config.seed, iteration, 3), timer=timer,
                    )
                reward_source = state.reward
                diagnostics["disc_accuracy"] = state.diagnostics["accuracies"][-1]
                if config.setup == "airl-airl":
                    model_user = state.policy
            with timer.stage("mdp_plus_solve"):
                system = optimize_system_neural(
                    system, reward_source, model_user, config.lambda_kl, config.system_steps,
                    config.ppo, _seed(config.seed, iteration, 4), horizon, timer,
                )
            user = oracle_user(iteration)
            mean, sem = evaluate(iteration, user)
        records.append(NeuralIterationRecord(
            iteration, config.setup, config.lambda_kl, mean, sem, timer.last_ms("iteration"), diagnostics
        ))
        if on_checkpoint is not None:
            on_checkpoint(iteration, system)

    return records
