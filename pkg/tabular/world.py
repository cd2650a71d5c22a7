"""
World Generation
================
Randomized tabular interactive systems and true reward functions.

Every world draws from three independent streams spawned from its seed
(graph, transitions, reward), so resampling transitions never disturbs the
connectivity graph or the reward.
"""

import logging
from typing import Any, Dict, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from core.errors import InvariantViolation
from core.mdp import RewardModel, TabularSystem

logger = logging.getLogger(__name__)

WORLD_FORMAT = "iso-world"
WORLD_VERSION = 1


class WorldConfig(BaseModel):
    """Parameters of a randomly sampled tabular world."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    n_states: int = Field(64, ge=1)
    n_actions: int = Field(4, ge=1)
    connection_factor: int = Field(8, ge=1)
    reward_fraction: float = Field(0.25, gt=0.0, lt=1.0)
    seed: int = Field(0, ge=0, lt=2**64)

    @model_validator(mode="after")
    def _connection_factor_fits(self) -> "WorldConfig":
        if self.connection_factor > self.n_states:
            raise ValueError(
                f"connection_factor {self.connection_factor} exceeds n_states {self.n_states}"
            )
        return self


def _streams(seed: int):
    graph, transitions, reward = np.random.SeedSequence(seed).spawn(3)
    return (
        np.random.default_rng(graph),
        np.random.default_rng(transitions),
        np.random.default_rng(reward),
    )


def _dirichlet_transitions(connectivity: np.ndarray, n_states: int, rng: np.random.Generator) -> np.ndarray:
    n_rows, n_actions, cf = connectivity.shape
    rows = rng.dirichlet(np.ones(cf), size=(n_rows, n_actions))
    # numpy 2 can return 1 - ulp for cf = 1
    rows /= rows.sum(axis=-1, keepdims=True)
    transition = np.zeros((n_rows, n_actions, n_states))
    np.put_along_axis(transition, connectivity, rows, axis=-1)
    return transition


def sample_connectivity(config: WorldConfig) -> np.ndarray:
    """cf distinct next states per (state, action), uniform without replacement."""
    graph_rng, _, _ = _streams(config.seed)
    connectivity = np.empty((config.n_states, config.n_actions, config.connection_factor), dtype=np.int64)
    for s in range(config.n_states):
        for a in range(config.n_actions):
            connectivity[s, a] = graph_rng.choice(config.n_states, config.connection_factor, replace=False)
    return np.sort(connectivity, axis=-1)


def sample_system(config: WorldConfig) -> TabularSystem:
    """
    Sample a world: fixed connectivity graph, Dirichlet(1) transition rows on
    it and a Dirichlet(1) initial distribution.
    """
    _, transition_rng, _ = _streams(config.seed)
    connectivity = sample_connectivity(config)
    transition = _dirichlet_transitions(connectivity, config.n_states, transition_rng)
    initial_dist = transition_rng.dirichlet(np.ones(config.n_states))
    logger.debug(
        "sampled world seed=%d states=%d actions=%d cf=%d",
        config.seed, config.n_states, config.n_actions, config.connection_factor,
    )
    return TabularSystem(connectivity=connectivity, transition=transition, initial_dist=initial_dist)


def resample_transitions(system: TabularSystem, seed: int) -> TabularSystem:
    """New Dirichlet(1) transition rows on the same connectivity graph."""
    rng = np.random.default_rng(seed)
    return system.with_transition(_dirichlet_transitions(system.connectivity, system.n_states, rng))


def sample_reward(config: WorldConfig) -> RewardModel:
    """Give reward 1 to round(reward_fraction * n_states) uniformly chosen states."""
    _, _, reward_rng = _streams(config.seed)
    n_rewarded = int(np.floor(config.reward_fraction * config.n_states + 0.5))
    weights = np.zeros(config.n_states)
    weights[reward_rng.choice(config.n_states, n_rewarded, replace=False)] = 1.0
    return RewardModel(weights, metadata={"method": "true", "seed": config.seed})


def world_to_dict(
    system: TabularSystem,
    reward: Optional[RewardModel] = None,
    config: Optional[WorldConfig] = None,
) -> Dict[str, Any]:
    """Versioned, JSON-serializable view of a world."""
    return {
        "format": WORLD_FORMAT,
        "version": WORLD_VERSION,
        "n_states": system.n_states,
        "n_actions": system.n_actions,
        "connectivity": system.connectivity.tolist(),
        "transition": system.transition.tolist(),
        "initial_dist": system.initial_dist.tolist(),
        "theta": None if reward is None else reward.weights.tolist(),
        "config": None if config is None else config.model_dump(),
    }


def world_from_dict(data: Dict[str, Any]) -> Tuple[TabularSystem, Optional[RewardModel], Optional[WorldConfig]]:
    if data.get("format") != WORLD_FORMAT:
        raise InvariantViolation(f"not a world file: format={data.get('format')!r}")
    if data.get("version") != WORLD_VERSION:
        raise InvariantViolation(f"unsupported world version {data.get('version')}")
    system = TabularSystem(
        connectivity=np.array(data["connectivity"], dtype=np.int64),
        transition=np.array(data["transition"]),
        initial_dist=np.array(data["initial_dist"]),
    )
    if (system.n_states, system.n_actions) != (data["n_states"], data["n_actions"]):
        raise InvariantViolation("world dimensions do not match its tables")
    reward = None if data.get("theta") is None else RewardModel(np.array(data["theta"]))
    config = None if data.get("config") is None else WorldConfig(**data["config"])
    return system, reward, config
