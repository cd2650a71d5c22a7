"""
Adversarial Reward Recovery
===========================
AIRL with a state-only reward: the discriminator scores a transition with
f(s, s') = g(s) + gamma * h(s') - h(s) and classifies expert versus generator
samples through the logit f - log pi(a|s). The generator is trained by PPO on
f - log pi. The recovered reward is g.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import expit

from core.errors import ModeCollapseError
from monitoring.performance import StageTimer
from neural.distributions import StochasticPolicy
from neural.envs import StepBatch, Transitions, UserEnv
from neural.mlp import MLP, Adam, clip_grad_norm
from neural.ppo import PPOConfig, PPOTrainer, Rollout

logger = logging.getLogger(__name__)


class AIRLConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    rounds: int = Field(40, ge=1)
    disc_epochs: int = Field(2, ge=1)
    disc_minibatch: int = Field(256, ge=1)
    disc_learning_rate: float = Field(3e-4, gt=0.0)
    gamma: float = Field(0.99, gt=0.0, le=1.0)
    hidden: Tuple[int, ...] = (64, 64)
    collapse_window: int = Field(20, ge=1)
    max_grad_norm: float = Field(10.0, gt=0.0)


class Discriminator:
    """Reward term g and shaping term h of the AIRL discriminator."""

    def __init__(self, state_dim: int, gamma: float, hidden: Tuple[int, ...] = (64, 64), seed: int = 0):
        rng = np.random.default_rng(seed)
        self.gamma = gamma
        self.g = MLP((state_dim, *hidden, 1), rng=rng)
        self.h = MLP((state_dim, *hidden, 1), rng=rng)

    def reward(self, states: np.ndarray) -> np.ndarray:
        return self.g(states).ravel()

    def f(self, obs: np.ndarray, next_obs: np.ndarray) -> np.ndarray:
        return self.reward(obs) + self.gamma * self.h(next_obs).ravel() - self.h(obs).ravel()

    def logits(self, obs: np.ndarray, next_obs: np.ndarray, logp: np.ndarray) -> np.ndarray:
        return self.f(obs, next_obs) - logp

    def generator_reward(self, batch: StepBatch) -> np.ndarray:
        return self.logits(batch.obs, batch.next_obs, batch.logp)

    def bce_step(self, obs, next_obs, logp, labels, g_opt: Adam, h_opt: Adam, max_grad_norm: float) -> float:
        """One gradient step of the logistic loss; returns the loss before the step."""
        g_out, g_cache = self.g.forward(obs)
        h_out, h_cache = self.h.forward(obs)
        h_next, h_next_cache = self.h.forward(next_obs)
        logits = g_out.ravel() + self.gamma * h_next.ravel() - h_out.ravel() - logp
        loss = float(np.mean(np.logaddexp(0.0, logits) - labels * logits))

        d_logit = ((expit(logits) - labels) / labels.size)[:, None]
        g_grads, _ = self.g.backward(g_cache, d_logit)
        h_grads, _ = self.h.backward(h_next_cache, self.gamma * d_logit)
        h_self, _ = self.h.backward(h_cache, -d_logit)
        h_grads = [a + b for a, b in zip(h_grads, h_self)]
        g_opt.step(clip_grad_norm(g_grads, max_grad_norm)[0])
        h_opt.step(clip_grad_norm(h_grads, max_grad_norm)[0])
        return loss


@dataclass
class AIRLState:
    """Recovered reward, rebuilt user policy and training diagnostics."""
    discriminator: Discriminator
    policy: StochasticPolicy
    diagnostics: Dict[str, Any] = field(default_factory=dict)

    def reward(self, states: np.ndarray) -> np.ndarray:
        return self.discriminator.reward(states)


def _collapsed(accuracies: List[float], one_class: List[bool], window: int) -> bool:
    if len(accuracies) < window:
        return False
    recent = accuracies[-window:]
    if all(a >= 0.999 for a in recent):
        return True
    return all(a == 0.5 for a in recent) and all(one_class[-window:])


def _generator_samples(rollout: Rollout) -> Transitions:
    return Transitions(rollout.flat("obs"), rollout.flat("actions"), rollout.flat("next_obs"))


def airl_train(
    expert: Transitions,
    env: UserEnv,
    steps: Optional[int] = None,
    config: Optional[AIRLConfig] = None,
    ppo_config: Optional[PPOConfig] = None,
    seed: int = 0,
    policy: Optional[StochasticPolicy] = None,
    timer: Optional[StageTimer] = None,
) -> AIRLState:
    """
    Alternate discriminator and generator updates for `steps` generator
    environment steps, or `config.rounds` rounds when no budget is given.

    Raises:
        ModeCollapseError: discriminator accuracy pinned at 1 (or at 0.5 with
            every prediction in one class) for `collapse_window` rounds.
    """
    config = config or AIRLConfig()
    ppo_config = ppo_config or PPOConfig()
    timer = timer or StageTimer()
    rng = np.random.default_rng([seed, 7])
    policy = policy or StochasticPolicy.build(
        "categorical", env.obs_dim, env.action_dim, ppo_config.hidden, seed=seed
    )
    trainer = PPOTrainer(policy, env, ppo_config, seed)
    disc = Discriminator(env.obs_dim, config.gamma, config.hidden, seed=seed + 1)
    g_opt = Adam(disc.g, config.disc_learning_rate)
    h_opt = Adam(disc.h, config.disc_learning_rate)

    per_round = trainer.n_envs * env.horizon
    rounds = config.rounds if steps is None else max(1, int(np.ceil(steps / per_round)))
    accuracies: List[float] = []
    one_class: List[bool] = []
    disc_losses: List[float] = []

    for round_index in range(rounds):
        with timer.stage("airl_round"):
            rollout = trainer.collect()
            generated = _generator_samples(rollout)
            n = min(len(generated), len(expert))
            expert_idx = rng.choice(len(expert), n, replace=False)
            gen_idx = rng.choice(len(generated), n, replace=False)
            obs = np.concatenate([expert.obs[expert_idx], generated.obs[gen_idx]])
            actions = np.concatenate([expert.actions[expert_idx], generated.actions[gen_idx]])
            next_obs = np.concatenate([expert.next_obs[expert_idx], generated.next_obs[gen_idx]])
            labels = np.concatenate([np.ones(n), np.zeros(n)])

            logp = trainer.policy.distribution(obs).log_prob(actions)
            predictions = disc.logits(obs, next_obs, logp) > 0
            accuracies.append(float(np.mean(predictions == (labels > 0.5))))
            one_class.append(bool(predictions.all() or not predictions.any()))
            if _collapsed(accuracies, one_class, config.collapse_window):
                raise ModeCollapseError(accuracies[-config.collapse_window:])

            losses = []
            for _ in range(config.disc_epochs):
                order = rng.permutation(2 * n)
                for start in range(0, 2 * n, config.disc_minibatch):
                    idx = order[start:start + config.disc_minibatch]
                    losses.append(disc.bce_step(
                        obs[idx], next_obs[idx], logp[idx], labels[idx], g_opt, h_opt, config.max_grad_norm
                    ))
            disc_losses.append(float(np.mean(losses)))

            trainer.update(trainer.relabel(rollout, disc.generator_reward))
        logger.debug("AIRL round %d accuracy %.3f loss %.4f", round_index, accuracies[-1], disc_losses[-1])

    return AIRLState(
        discriminator=disc,
        policy=trainer.policy,
        diagnostics={
            "rounds": rounds,
            "accuracies": accuracies,
            "disc_losses": disc_losses,
            "generator_returns": [u.mean_return for u in trainer.curve],
        },
    )
