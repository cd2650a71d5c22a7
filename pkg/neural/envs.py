"""
Neural Environments
===================
Vectorized fixed-length episodes for the continuous world.

UserEnv is the original MDP: the user picks a discrete action, the frozen
system policy draws the next state. SystemEnv is MDP+: the observation is the
composite s+ = s concatenated with onehot(a), the system's action is the next
state, and the frozen user policy picks the next action. BanditEnv is a
one-step continuous sanity environment.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from neural.distributions import Distribution, StochasticPolicy

DEFAULT_HORIZON = 40
STATE_BOUND = 1.0


@dataclass
class StepBatch:
    """Flattened transitions handed to reward functions."""
    obs: np.ndarray
    actions: np.ndarray
    next_obs: np.ndarray
    logp: np.ndarray
    dist: Optional[Distribution] = None

    def __len__(self) -> int:
        return self.obs.shape[0]


RewardFn = Callable[[StepBatch], np.ndarray]
StateReward = Callable[[np.ndarray], np.ndarray]


@dataclass
class Transitions:
    """User (s, a, s') samples, e.g. an expert log."""
    obs: np.ndarray
    actions: np.ndarray
    next_obs: np.ndarray

    def __len__(self) -> int:
        return self.obs.shape[0]


def uniform_states(n: int, state_dim: int, rng: np.random.Generator) -> np.ndarray:
    """D0: uniform on [-1, 1]^d."""
    return rng.uniform(-STATE_BOUND, STATE_BOUND, size=(n, state_dim))


def one_hot(actions: np.ndarray, n_actions: int) -> np.ndarray:
    encoded = np.zeros((actions.shape[0], n_actions))
    encoded[np.arange(actions.shape[0]), actions.astype(int)] = 1.0
    return encoded


def system_input(states: np.ndarray, actions: np.ndarray, n_actions: int) -> np.ndarray:
    return np.concatenate([states, one_hot(actions, n_actions)], axis=1)


class UserEnv:
    """The user's MDP under a frozen system policy."""

    action_kind = "discrete"

    def __init__(self, system_policy: StochasticPolicy, state_dim: int, n_actions: int,
                 horizon: int = DEFAULT_HORIZON):
        if system_policy.net.in_dim != state_dim + n_actions:
            raise ValueError("system policy input must be state_dim + n_actions")
        self.system_policy = system_policy
        self.state_dim = state_dim
        self.n_actions = n_actions
        self.horizon = horizon

    @property
    def obs_dim(self) -> int:
        return self.state_dim

    @property
    def action_dim(self) -> int:
        return self.n_actions

    def reset(self, n_envs: int, rng: np.random.Generator) -> np.ndarray:
        return uniform_states(n_envs, self.state_dim, rng)

    def step(self, obs: np.ndarray, actions: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        dist = self.system_policy.distribution(system_input(obs, actions, self.n_actions))
        return np.clip(dist.sample(rng), -STATE_BOUND, STATE_BOUND)

    def lift_reward(self, reward: StateReward) -> RewardFn:
        return lambda batch: reward(batch.obs)


class SystemEnv:
    """MDP+ under a frozen user policy; actions are next states."""

    action_kind = "continuous"

    def __init__(self, user_policy: StochasticPolicy, state_dim: int, n_actions: int,
                 horizon: int = DEFAULT_HORIZON):
        if user_policy.net.in_dim != state_dim or user_policy.action_dim != n_actions:
            raise ValueError("user policy does not match the state and action sizes")
        self.user_policy = user_policy
        self.state_dim = state_dim
        self.n_actions = n_actions
        self.horizon = horizon

    @property
    def obs_dim(self) -> int:
        return self.state_dim + self.n_actions

    @property
    def action_dim(self) -> int:
        return self.state_dim

    def _compose(self, states: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        actions, _ = self.user_policy.act(states, rng)
        return system_input(states, actions, self.n_actions)

    def reset(self, n_envs: int, rng: np.random.Generator) -> np.ndarray:
        return self._compose(uniform_states(n_envs, self.state_dim, rng), rng)

    def step(self, obs: np.ndarray, actions: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return self._compose(np.clip(actions, -STATE_BOUND, STATE_BOUND), rng)

    def lift_reward(self, reward: StateReward) -> RewardFn:
        """r+((s, a)) = r(s)."""
        return lambda batch: reward(batch.obs[:, :self.state_dim])


class BanditEnv:
    """One-step continuous bandit whose optimal action is `target`."""

    action_kind = "continuous"

    def __init__(self, target, horizon: int = 1):
        self.target = np.atleast_1d(np.asarray(target, dtype=np.float64))
        self.horizon = horizon

    @property
    def obs_dim(self) -> int:
        return 1

    @property
    def action_dim(self) -> int:
        return self.target.shape[0]

    def reset(self, n_envs: int, rng: np.random.Generator) -> np.ndarray:
        return np.zeros((n_envs, 1))

    def step(self, obs: np.ndarray, actions: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return obs

    def reward(self, batch: StepBatch) -> np.ndarray:
        return -((batch.actions - self.target) ** 2).sum(axis=1)


def rollout_transitions(env: UserEnv, policy: StochasticPolicy, n_episodes: int,
                        rng: np.random.Generator) -> Transitions:
    """Sample full episodes of a user policy as (s, a, s') transitions."""
    obs = env.reset(n_episodes, rng)
    buffers = ([], [], [])
    for _ in range(env.horizon):
        actions, _ = policy.act(obs, rng)
        next_obs = env.step(obs, actions, rng)
        for buffer, value in zip(buffers, (obs, actions, next_obs)):
            buffer.append(value)
        obs = next_obs
    return Transitions(*(np.concatenate(buffer) for buffer in buffers))
