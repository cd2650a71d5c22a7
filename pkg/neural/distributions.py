"""
Policy Distributions
====================
Categorical user actions and bounded diagonal-Gaussian next states, each with
analytic log-density, entropy and KL, and gradients of those with respect to
the raw network outputs.
"""

from dataclasses import dataclass
from typing import Literal, Optional, Tuple, Union

import numpy as np
from scipy.special import log_softmax

from neural.mlp import MLP, Params

LOGVAR_MIN = -5.0
LOGVAR_MAX = 2.0
_LOG_2PI = np.log(2.0 * np.pi)


class Categorical:
    """Batch of categorical distributions from logits of shape (N, A)."""

    def __init__(self, logits: np.ndarray):
        self.logits = logits
        self.log_probs = log_softmax(logits, axis=-1)
        self.probs = np.exp(self.log_probs)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        cumulative = np.cumsum(self.probs, axis=-1)
        cumulative[:, -1] = 1.0
        u = rng.random(self.probs.shape[0])
        return (u[:, None] >= cumulative).sum(axis=1)

    def mode(self) -> np.ndarray:
        return np.argmax(self.logits, axis=-1)

    def log_prob(self, actions: np.ndarray) -> np.ndarray:
        return self.log_probs[np.arange(actions.shape[0]), actions.astype(int)]

    def entropy(self) -> np.ndarray:
        return -(self.probs * self.log_probs).sum(axis=-1)

    def grad_log_prob(self, actions: np.ndarray) -> np.ndarray:
        grad = -self.probs.copy()
        grad[np.arange(actions.shape[0]), actions.astype(int)] += 1.0
        return grad

    def grad_entropy(self) -> np.ndarray:
        return -self.probs * (self.log_probs + self.entropy()[:, None])

    def kl(self, other: "Categorical") -> np.ndarray:
        return (self.probs * (self.log_probs - other.log_probs)).sum(axis=-1)


class BoundedGaussian:
    """
    Diagonal Gaussian from raw outputs of shape (N, 2d): the first d squash to
    a mean in (-1, 1) through tanh, the last d to a log-variance in
    [LOGVAR_MIN, LOGVAR_MAX].
    """

    def __init__(self, raw: np.ndarray):
        self.dim = raw.shape[-1] // 2
        self.raw = raw
        self.mean = np.tanh(raw[:, :self.dim])
        self._tanh_logvar = np.tanh(raw[:, self.dim:])
        self.logvar = LOGVAR_MIN + 0.5 * (LOGVAR_MAX - LOGVAR_MIN) * (self._tanh_logvar + 1.0)
        self.var = np.exp(self.logvar)

    def _chain(self, d_mean: np.ndarray, d_logvar: np.ndarray) -> np.ndarray:
        """Map gradients w.r.t. (mean, logvar) onto the raw outputs."""
        return np.concatenate(
            [
                d_mean * (1.0 - self.mean ** 2),
                d_logvar * 0.5 * (LOGVAR_MAX - LOGVAR_MIN) * (1.0 - self._tanh_logvar ** 2),
            ],
            axis=-1,
        )

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self.mean + np.sqrt(self.var) * rng.standard_normal(self.mean.shape)

    def mode(self) -> np.ndarray:
        return self.mean

    def log_prob(self, x: np.ndarray) -> np.ndarray:
        return -0.5 * (((x - self.mean) ** 2) / self.var + self.logvar + _LOG_2PI).sum(axis=-1)

    def entropy(self) -> np.ndarray:
        return 0.5 * (self.logvar + 1.0 + _LOG_2PI).sum(axis=-1)

    def kl(self, other: "BoundedGaussian") -> np.ndarray:
        """KL(self || other), summed over dimensions."""
        return 0.5 * (
            other.logvar - self.logvar + (self.var + (self.mean - other.mean) ** 2) / other.var - 1.0
        ).sum(axis=-1)

    def grad_log_prob(self, x: np.ndarray) -> np.ndarray:
        diff = x - self.mean
        return self._chain(diff / self.var, -0.5 + 0.5 * diff ** 2 / self.var)

    def grad_entropy(self) -> np.ndarray:
        return self._chain(np.zeros_like(self.mean), np.full_like(self.logvar, 0.5))

    def grad_kl(self, other: "BoundedGaussian") -> np.ndarray:
        """Gradient of KL(self || other) w.r.t. self's raw outputs."""
        return self._chain((self.mean - other.mean) / other.var, 0.5 * (self.var / other.var - 1.0))


Distribution = Union[Categorical, BoundedGaussian]
PolicyKind = Literal["categorical", "gaussian"]


@dataclass
class StochasticPolicy:
    """An MLP whose output parameterizes a categorical or bounded-Gaussian policy."""

    net: MLP
    kind: PolicyKind

    @classmethod
    def build(
        cls,
        kind: PolicyKind,
        obs_dim: int,
        action_dim: int,
        hidden: Tuple[int, ...] = (64, 64),
        seed: Optional[int] = None,
        output_scale: float = 0.01,
    ) -> "StochasticPolicy":
        out_dim = action_dim if kind == "categorical" else 2 * action_dim
        return cls(MLP((obs_dim, *hidden, out_dim), seed=seed, output_scale=output_scale), kind)

    @property
    def action_dim(self) -> int:
        return self.net.out_dim if self.kind == "categorical" else self.net.out_dim // 2

    def _wrap(self, raw: np.ndarray) -> Distribution:
        return Categorical(raw) if self.kind == "categorical" else BoundedGaussian(raw)

    def forward(self, obs: np.ndarray):
        raw, cache = self.net.forward(obs)
        return self._wrap(raw), cache

    def distribution(self, obs: np.ndarray) -> Distribution:
        return self._wrap(self.net(obs))

    def act(self, obs: np.ndarray, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        """Sampled actions and their log-probabilities."""
        dist = self.distribution(obs)
        actions = dist.sample(rng)
        return actions, dist.log_prob(actions)

    def backward(self, cache, d_raw: np.ndarray) -> Params:
        return self.net.backward(cache, d_raw)[0]

    def copy(self) -> "StochasticPolicy":
        return StochasticPolicy(self.net.copy(), self.kind)
