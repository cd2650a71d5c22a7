"""
User Behavior
=============
Simulated interaction logs: optimal users, mixes with an adversarial user
(MB), per-step action noise (NB), and trajectories scored by the true reward.

Each trajectory draws from its own generator seeded with (seed, index), so the
log does not depend on how the work is split.
"""

import hashlib
import json
import logging
import math
import re
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Union

import numpy as np

from core.errors import InvariantViolation
from core.mdp import Policy, RewardModel, TabularSystem, Trajectory

logger = logging.getLogger(__name__)


class DegenerateNoiseWarning(UserWarning):
    """Action noise was requested on a system with a single action."""


_BEHAVIOR_PATTERN = re.compile(r"^suboptimal-(?P<nf>[0-9.]+)-(?P<kind>mb|nb)$")


@dataclass(frozen=True)
class BehaviorType:
    """One of the logged behavior datasets: irl-labelled, optimal, mb or nb."""

    kind: str
    noise_factor: float = 0.0

    def __post_init__(self):
        if self.kind not in ("irl-labelled", "optimal", "mb", "nb"):
            raise ValueError(f"unknown behavior kind {self.kind!r}")
        if not 0.0 <= self.noise_factor <= 1.0:
            raise ValueError(f"noise factor must lie in [0, 1], got {self.noise_factor}")

    @classmethod
    def parse(cls, label: str) -> "BehaviorType":
        text = label.strip().lower()
        if text in ("irl-labelled", "irl-labeled"):
            return cls("irl-labelled")
        if text == "optimal":
            return cls("optimal")
        match = _BEHAVIOR_PATTERN.match(text)
        if not match:
            raise ValueError(f"unknown behavior label {label!r}")
        return cls(match["kind"], float(match["nf"]))

    @property
    def label(self) -> str:
        if self.kind in ("irl-labelled", "optimal"):
            return self.kind
        return f"suboptimal-{self.noise_factor:g}-{self.kind}"

    @property
    def scored(self) -> bool:
        return self.kind == "irl-labelled"


def _cumulative(table: np.ndarray) -> np.ndarray:
    cumulative = np.cumsum(table, axis=-1)
    cumulative[..., -1] = 1.0
    return cumulative


def _draw(cumulative: np.ndarray, u: float) -> int:
    return int(np.searchsorted(cumulative, u, side="right"))


def _rollout(
    cum_initial: np.ndarray,
    cum_policy: np.ndarray,
    cum_transition: np.ndarray,
    len_min: int,
    len_max: int,
    rng: np.random.Generator,
) -> Trajectory:
    length = int(rng.integers(len_min, len_max + 1))
    draws = rng.random(2 * length)
    states, actions = [], []
    s = _draw(cum_initial, draws[0])
    for t in range(length):
        a = _draw(cum_policy[s], draws[2 * t + 1])
        states.append(s)
        actions.append(a)
        if t + 1 < length:
            s = _draw(cum_transition[s, a], draws[2 * t + 2])
    return Trajectory(tuple(states), tuple(actions))


def _check_lengths(len_min: int, len_max: int) -> None:
    if not 1 <= len_min <= len_max:
        raise InvariantViolation(f"need 1 <= len_min <= len_max, got [{len_min}, {len_max}]")


def sample_trajectories(
    system: TabularSystem,
    policy: Policy,
    count: int,
    len_min: int,
    len_max: int,
    seed: int,
) -> List[Trajectory]:
    """
    Sample `count` trajectories: S0 ~ D0, a ~ pi(.|s), s' ~ T(.|s, a), with
    length uniform on [len_min, len_max].
    """
    return _sample_mixture(system, [policy], np.zeros(count, dtype=int), len_min, len_max, seed)


def _sample_mixture(
    system: TabularSystem,
    policies: Sequence[Policy],
    assignment: np.ndarray,
    len_min: int,
    len_max: int,
    seed: int,
) -> List[Trajectory]:
    _check_lengths(len_min, len_max)
    for policy in policies:
        if policy.probs.shape != (system.n_states, system.n_actions):
            raise InvariantViolation("policy does not match the system")
    cum_initial = _cumulative(system.initial_dist)
    cum_transition = _cumulative(system.transition)
    cum_policies = [_cumulative(p.probs) for p in policies]
    return [
        _rollout(cum_initial, cum_policies[k], cum_transition, len_min, len_max,
                 np.random.default_rng([seed, index]))
        for index, k in enumerate(assignment)
    ]


def adversarial_policy(policy: Policy) -> Policy:
    """Deterministic policy on the least likely action, lowest index on ties."""
    return Policy.greedy(-policy.probs)


def mix_behaviors(
    system: TabularSystem,
    optimal: Policy,
    noise_factor: float,
    count: int,
    len_min: int,
    len_max: int,
    seed: int,
) -> List[Trajectory]:
    """
    Mix of behaviors (MB): ceil(NF * count) trajectories from the adversarial
    policy at seed-chosen positions, the rest from the optimal policy.
    """
    if not 0.0 <= noise_factor <= 1.0:
        raise InvariantViolation(f"noise factor must lie in [0, 1], got {noise_factor}")
    n_adversarial = min(count, math.ceil(noise_factor * count - 1e-9))
    assignment = np.zeros(count, dtype=int)
    if n_adversarial:
        # separate selector stream; trajectories use the [seed, index] streams
        selector = np.random.default_rng([seed, count, 1])
        assignment[selector.choice(count, n_adversarial, replace=False)] = 1
    logger.debug("MB log: %d of %d trajectories adversarial", n_adversarial, count)
    return _sample_mixture(
        system, [optimal, adversarial_policy(optimal)], assignment, len_min, len_max, seed
    )


def noisy_policy(policy: Policy, noise_factor: float) -> Policy:
    """
    Noise in behavior (NB): per state, the argmax action with probability
    1 - NF, otherwise a uniformly chosen non-argmax action.
    """
    if not 0.0 <= noise_factor <= 1.0:
        raise InvariantViolation(f"noise factor must lie in [0, 1], got {noise_factor}")
    n_states, n_actions = policy.probs.shape
    if n_actions == 1:
        if noise_factor > 0:
            warnings.warn(
                "single-action system: action noise has no alternative, policy returned unchanged",
                DegenerateNoiseWarning,
                stacklevel=2,
            )
        return policy
    best = np.argmax(policy.probs, axis=1)
    probs = np.full((n_states, n_actions), noise_factor / (n_actions - 1))
    probs[np.arange(n_states), best] = 1.0 - noise_factor
    return Policy(probs)


def accrued_features(trajectory: Trajectory, gamma: float, features: np.ndarray) -> np.ndarray:
    """psi(zeta) = sum_t gamma^t phi(S_t)."""
    discounts = gamma ** np.arange(len(trajectory))
    return discounts @ features[list(trajectory.states)]


def score_trajectories(
    trajectories: Iterable[Trajectory],
    reward: RewardModel,
    gamma: float,
    features: Optional[np.ndarray] = None,
) -> List[Trajectory]:
    """Attach score(zeta) = theta . psi(zeta) to every trajectory."""
    features = np.eye(reward.weights.shape[0]) if features is None else features
    return [
        t.with_score(float(accrued_features(t, gamma, features) @ reward.weights))
        for t in trajectories
    ]


def generate_log(
    behavior: Union[BehaviorType, str],
    system: TabularSystem,
    optimal: Policy,
    true_reward: RewardModel,
    gamma: float,
    count: int,
    len_min: int,
    len_max: int,
    seed: int,
) -> List[Trajectory]:
    """The interaction log of one behavior type under the current system."""
    if isinstance(behavior, str):
        behavior = BehaviorType.parse(behavior)
    if behavior.kind == "mb":
        return mix_behaviors(system, optimal, behavior.noise_factor, count, len_min, len_max, seed)
    policy = noisy_policy(optimal, behavior.noise_factor) if behavior.kind == "nb" else optimal
    trajectories = sample_trajectories(system, policy, count, len_min, len_max, seed)
    if behavior.scored:
        return score_trajectories(trajectories, true_reward, gamma, system.features)
    return trajectories


def _record(index: int, trajectory: Trajectory) -> str:
    return json.dumps({"traj_id": index, "steps": trajectory.flat(), "score": trajectory.score})


def log_digest(trajectories: Sequence[Trajectory]) -> str:
    """sha256 over the line-delimited form of a log."""
    digest = hashlib.sha256()
    for index, trajectory in enumerate(trajectories):
        digest.update((_record(index, trajectory) + "\n").encode("utf-8"))
    return digest.hexdigest()


def dump_trajectories(trajectories: Sequence[Trajectory], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        for index, trajectory in enumerate(trajectories):
            f.write(_record(index, trajectory) + "\n")
    return path


def load_trajectories(path: Union[str, Path]) -> List[Trajectory]:
    trajectories = []
    with open(path, "r") as f:
        for line in f:
            if not line.strip():
                continue
            record = json.loads(line)
            steps = record["steps"]
            trajectories.append(Trajectory(tuple(steps[0::2]), tuple(steps[1::2]), record.get("score")))
    return trajectories
