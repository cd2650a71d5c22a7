"""
Multi-Layer Perceptron
======================
Dense feed-forward networks in numpy with a hand-written backward pass, plus
the Adam optimizer and global-norm gradient clipping used by PPO and AIRL.

Batches are rows: x has shape (N, in_dim), layer k computes
act_k(x @ W_k + b_k).
"""

import logging
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

Activation = Literal["tanh", "relu", "identity"]
Init = Literal["glorot", "uniform"]

Params = List[np.ndarray]


def _activate(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    return z


def _activation_grad(kind: str, z: np.ndarray, out: np.ndarray) -> np.ndarray:
    if kind == "tanh":
        return 1.0 - out ** 2
    if kind == "relu":
        return (z > 0).astype(z.dtype)
    return np.ones_like(z)


class MLP:
    """
    Dense network with one activation tag per layer.

    Parameters are stored as a flat list [W0, b0, W1, b1, ...] so optimizers
    and checkpoints treat every network the same way.
    """

    def __init__(
        self,
        sizes: Sequence[int],
        activations: Optional[Sequence[Activation]] = None,
        seed: Optional[int] = None,
        rng: Optional[np.random.Generator] = None,
        init: Init = "glorot",
        output_scale: float = 1.0,
        init_scale: float = 1.0,
    ):
        if len(sizes) < 2:
            raise ValueError("an MLP needs at least an input and an output size")
        self.sizes = tuple(int(s) for s in sizes)
        n_layers = len(self.sizes) - 1
        self.activations = tuple(activations or ["tanh"] * (n_layers - 1) + ["identity"])
        if len(self.activations) != n_layers:
            raise ValueError(f"need {n_layers} activation tags, got {len(self.activations)}")

        rng = rng if rng is not None else np.random.default_rng(seed)
        self.params: Params = []
        for k, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            if init == "glorot":
                limit = np.sqrt(6.0 / (fan_in + fan_out))
                weights = rng.uniform(-limit, limit, size=(fan_in, fan_out))
                bias = np.zeros(fan_out)
            else:
                limit = init_scale / np.sqrt(fan_in)
                weights = rng.uniform(-limit, limit, size=(fan_in, fan_out))
                bias = rng.uniform(-limit, limit, size=fan_out)
            if k == n_layers - 1:
                weights = weights * output_scale
            self.params.extend([weights, bias])

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    @property
    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params))

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, List[Tuple[np.ndarray, np.ndarray, np.ndarray]]]:
        """Output and the per-layer (input, pre-activation, output) cache."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        cache = []
        for k, kind in enumerate(self.activations):
            weights, bias = self.params[2 * k], self.params[2 * k + 1]
            z = x @ weights + bias
            out = _activate(kind, z)
            cache.append((x, z, out))
            x = out
        return x, cache

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache, d_out: np.ndarray) -> Tuple[Params, np.ndarray]:
        """
        Gradients of sum(d_out * output) with respect to every parameter and
        to the input.
        """
        grads: Params = [np.empty(0)] * len(self.params)
        delta = d_out
        for k in range(len(self.activations) - 1, -1, -1):
            x, z, out = cache[k]
            dz = delta * _activation_grad(self.activations[k], z, out)
            grads[2 * k] = x.T @ dz
            grads[2 * k + 1] = dz.sum(axis=0)
            delta = dz @ self.params[2 * k].T
        return grads, delta

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, flat: np.ndarray) -> None:
        offset = 0
        for i, p in enumerate(self.params):
            self.params[i] = np.asarray(flat[offset:offset + p.size], dtype=np.float64).reshape(p.shape)
            offset += p.size
        if offset != flat.size:
            raise ValueError(f"expected {offset} parameters, got {flat.size}")

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {f"p{i}": p.copy() for i, p in enumerate(self.params)}
        state["sizes"] = np.array(self.sizes)
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        if tuple(int(s) for s in state["sizes"]) != self.sizes:
            raise ValueError("checkpoint shape does not match the network")
        self.params = [np.array(state[f"p{i}"], dtype=np.float64) for i in range(len(self.params))]

    def copy(self) -> "MLP":
        clone = object.__new__(MLP)
        clone.sizes = self.sizes
        clone.activations = self.activations
        clone.params = [p.copy() for p in self.params]
        return clone


def global_norm(grads: Params) -> float:
    return float(np.sqrt(sum(np.sum(g ** 2) for g in grads)))


def clip_grad_norm(grads: Params, max_norm: float) -> Tuple[Params, float]:
    """Rescale gradients so their global norm is at most `max_norm`."""
    norm = global_norm(grads)
    if norm > max_norm > 0:
        scale = max_norm / (norm + 1e-12)
        grads = [g * scale for g in grads]
    return grads, norm


class Adam:
    """Adam on the parameter list of one network."""

    def __init__(self, net: MLP, learning_rate: float = 3e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.net = net
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p) for p in net.params]
        self.v = [np.zeros_like(p) for p in net.params]

    def step(self, grads: Params) -> None:
        """Descend along `grads` (gradients of a loss)."""
        self.step_count += 1
        correction1 = 1.0 - self.beta1 ** self.step_count
        correction2 = 1.0 - self.beta2 ** self.step_count
        for i, g in enumerate(grads):
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g ** 2
            update = self.learning_rate * (self.m[i] / correction1) / (np.sqrt(self.v[i] / correction2) + self.eps)
            self.net.params[i] = self.net.params[i] - update
