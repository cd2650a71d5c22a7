"""
Proximal Policy Optimization
============================
Clipped-surrogate PPO with generalized advantage estimation on the
vectorized fixed-length environments. The same trainer optimizes the user in
the original MDP and the system in MDP+.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from core.errors import TrainingFailure
from monitoring.performance import StageTimer
from neural.distributions import StochasticPolicy
from neural.envs import RewardFn, StepBatch
from neural.mlp import MLP, Adam, clip_grad_norm

logger = logging.getLogger(__name__)


class PPOConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    clip: float = Field(0.2, gt=0.0, lt=1.0)
    gae_lambda: float = Field(0.95, ge=0.0, le=1.0)
    gamma: float = Field(0.99, gt=0.0, le=1.0)
    epochs: int = Field(4, ge=1)
    batch_size: int = Field(2048, ge=1)
    minibatch_size: int = Field(256, ge=1)
    learning_rate: float = Field(3e-4, gt=0.0)
    entropy_coef: float = Field(0.01, ge=0.0)
    value_coef: float = Field(0.5, ge=0.0)
    max_grad_norm: float = Field(0.5, gt=0.0)
    normalize_advantages: bool = True
    hidden: Tuple[int, ...] = (64, 64)


@dataclass
class Rollout:
    """One batch of synchronized episodes, arrays shaped (horizon, n_envs, ...)."""
    obs: np.ndarray
    actions: np.ndarray
    next_obs: np.ndarray
    logp: np.ndarray
    values: np.ndarray
    rewards: np.ndarray

    @property
    def n_steps(self) -> int:
        return self.rewards.size

    def flat(self, name: str) -> np.ndarray:
        array = getattr(self, name)
        return array.reshape(-1, *array.shape[2:])

    def episode_returns(self) -> np.ndarray:
        return self.rewards.sum(axis=0)


@dataclass
class PPOUpdate:
    update: int
    mean_return: float
    policy_loss: float
    value_loss: float
    entropy: float
    approx_kl: float
    within_clip: float


@dataclass
class PPOResult:
    policy: StochasticPolicy
    value_net: MLP
    curve: List[PPOUpdate] = field(default_factory=list)


def gae_advantages(rewards: np.ndarray, values: np.ndarray, gamma: float, lam: float) -> np.ndarray:
    """GAE over (horizon, n_envs) arrays; the episode cap is terminal."""
    advantages = np.zeros_like(rewards)
    running = np.zeros(rewards.shape[1])
    for t in range(rewards.shape[0] - 1, -1, -1):
        next_value = values[t + 1] if t + 1 < rewards.shape[0] else 0.0
        delta = rewards[t] + gamma * next_value - values[t]
        running = delta + gamma * lam * running
        advantages[t] = running
    return advantages


class PPOTrainer:
    """
    Owns a private copy of `policy`, a value network and their optimizers.

    `collect` and `update` are separate so adversarial training can relabel
    rewards between them; `train` alternates them for a step budget.
    """

    def __init__(self, policy: StochasticPolicy, env, config: Optional[PPOConfig] = None,
                 seed: int = 0, value_net: Optional[MLP] = None):
        self.config = config or PPOConfig()
        self.env = env
        self.policy = policy.copy()
        self.rng = np.random.default_rng(seed)
        self.value_net = value_net.copy() if value_net is not None else MLP(
            (env.obs_dim, *self.config.hidden, 1), rng=self.rng
        )
        self.policy_opt = Adam(self.policy.net, self.config.learning_rate)
        self.value_opt = Adam(self.value_net, self.config.learning_rate)
        self.updates = 0
        self.curve: List[PPOUpdate] = []

    @property
    def n_envs(self) -> int:
        return max(1, math.ceil(self.config.batch_size / self.env.horizon))

    def collect(self, reward_fn: Optional[RewardFn] = None) -> Rollout:
        """Run one batch of episodes; rewards are filled by `reward_fn` at collection time."""
        obs = self.env.reset(self.n_envs, self.rng)
        buffers: Dict[str, list] = {"obs": [], "actions": [], "next_obs": [], "logp": []}
        for _ in range(self.env.horizon):
            actions, logp = self.policy.act(obs, self.rng)
            next_obs = self.env.step(obs, actions, self.rng)
            for name, value in zip(buffers, (obs, actions, next_obs, logp)):
                buffers[name].append(value)
            obs = next_obs
        stacked = {name: np.stack(values) for name, values in buffers.items()}
        horizon, n_envs = stacked["logp"].shape
        values = self.value_net(stacked["obs"].reshape(horizon * n_envs, -1)).reshape(horizon, n_envs)
        rollout = Rollout(values=values, rewards=np.zeros((horizon, n_envs)), **stacked)
        return self.relabel(rollout, reward_fn) if reward_fn is not None else rollout

    def batch(self, rollout: Rollout) -> StepBatch:
        obs = rollout.flat("obs")
        return StepBatch(
            obs=obs,
            actions=rollout.flat("actions"),
            next_obs=rollout.flat("next_obs"),
            logp=rollout.logp.ravel(),
            dist=self.policy.distribution(obs),
        )

    def relabel(self, rollout: Rollout, reward_fn: RewardFn) -> Rollout:
        rewards = np.asarray(reward_fn(self.batch(rollout)), dtype=np.float64)
        rollout.rewards = rewards.reshape(rollout.logp.shape)
        return rollout

    def _checkpoint(self) -> Dict[str, Any]:
        return {"policy": self.policy.net.state_dict(), "value": self.value_net.state_dict(),
                "update": self.updates}

    def update(self, rollout: Rollout) -> PPOUpdate:
        cfg = self.config
        checkpoint = self._checkpoint()
        advantages = gae_advantages(rollout.rewards, rollout.values, cfg.gamma, cfg.gae_lambda)
        returns = (advantages + rollout.values).ravel()
        advantages = advantages.ravel()
        if cfg.normalize_advantages and advantages.size > 1:
            advantages = (advantages - advantages.mean()) / (advantages.std() + 1e-8)

        obs, actions, old_logp = rollout.flat("obs"), rollout.flat("actions"), rollout.logp.ravel()
        n = old_logp.size
        losses = {"policy": 0.0, "value": 0.0, "entropy": 0.0}
        for _ in range(cfg.epochs):
            order = self.rng.permutation(n)
            for start in range(0, n, cfg.minibatch_size):
                idx = order[start:start + cfg.minibatch_size]
                m = idx.size
                dist, cache = self.policy.forward(obs[idx])
                logp = dist.log_prob(actions[idx])
                ratio = np.exp(logp - old_logp[idx])
                adv = advantages[idx]
                surr1 = ratio * adv
                surr2 = np.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * adv
                entropy = dist.entropy()
                policy_loss = -np.mean(np.minimum(surr1, surr2)) - cfg.entropy_coef * entropy.mean()

                values, value_cache = self.value_net.forward(obs[idx])
                value_err = values.ravel() - returns[idx]
                value_loss = 0.5 * np.mean(value_err ** 2)
                if not (np.isfinite(policy_loss) and np.isfinite(value_loss)):
                    raise TrainingFailure(
                        f"non-finite PPO loss at update {self.updates}", checkpoint=checkpoint
                    )

                d_logp = np.where(surr1 <= surr2, -adv * ratio, 0.0) / m
                d_raw = (
                    dist.grad_log_prob(actions[idx]) * d_logp[:, None]
                    - cfg.entropy_coef * dist.grad_entropy() / m
                )
                policy_grads, _ = clip_grad_norm(self.policy.backward(cache, d_raw), cfg.max_grad_norm)
                self.policy_opt.step(policy_grads)

                value_grads, _ = self.value_net.backward(value_cache, cfg.value_coef * value_err[:, None] / m)
                value_grads, _ = clip_grad_norm(value_grads, cfg.max_grad_norm)
                self.value_opt.step(value_grads)

                losses["policy"] += float(policy_loss) * m
                losses["value"] += float(value_loss) * m
                losses["entropy"] += float(entropy.mean()) * m

        final_logp = self.policy.distribution(obs).log_prob(actions)
        log_ratio = final_logp - old_logp
        ratio = np.exp(log_ratio)
        total = n * cfg.epochs
        record = PPOUpdate(
            update=self.updates,
            mean_return=float(rollout.episode_returns().mean()),
            policy_loss=losses["policy"] / total,
            value_loss=losses["value"] / total,
            entropy=losses["entropy"] / total,
            approx_kl=float(np.mean((ratio - 1.0) - log_ratio)),
            within_clip=float(np.mean(np.abs(ratio - 1.0) <= cfg.clip)),
        )
        self.updates += 1
        self.curve.append(record)
        return record

    def train(self, reward_fn: RewardFn, steps: int, timer: Optional[StageTimer] = None) -> PPOResult:
        """Collect-then-update until `steps` environment steps have been used (at least one batch)."""
        timer = timer or StageTimer()
        n_updates = max(1, math.ceil(steps / (self.n_envs * self.env.horizon)))
        for _ in range(n_updates):
            with timer.stage("ppo_update"):
                record = self.update(self.collect(reward_fn))
            logger.debug("PPO update %d mean return %.4f", record.update, record.mean_return)
        return PPOResult(self.policy, self.value_net, list(self.curve))


def ppo_optimize(
    policy: StochasticPolicy,
    env,
    reward_fn: RewardFn,
    steps: int,
    config: Optional[PPOConfig] = None,
    seed: int = 0,
    timer: Optional[StageTimer] = None,
) -> PPOResult:
    """Train a copy of `policy` with PPO; the input policy is left untouched."""
    return PPOTrainer(policy, env, config, seed).train(reward_fn, steps, timer)
