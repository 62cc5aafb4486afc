"""Uniform episodic environment interface.

Environments are seeded at construction and deterministic given the seed and
the action sequence. Instances are single-threaded; run one per rollout
thread when parallelizing.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from ..action_index import ActionSet


@dataclass(frozen=True)
class EnvStep:
    """One environment response: next observation, scalar reward, terminal."""

    observation: np.ndarray
    reward: float
    terminal: bool

    def __post_init__(self) -> None:
        obs = np.asarray(self.observation, dtype=np.float64)
        object.__setattr__(self, "observation", obs)
        if not np.all(np.isfinite(obs)) or not np.isfinite(self.reward):
            raise ValueError("non-finite observation or reward")


class Environment(ABC):
    """Episodic MDP with a discrete, embedded action set."""

    @property
    @abstractmethod
    def observation_dim(self) -> int: ...

    @property
    @abstractmethod
    def action_set(self) -> ActionSet: ...

    @abstractmethod
    def reset(self) -> np.ndarray:
        """Start a new episode; returns the initial observation."""

    @abstractmethod
    def step(self, action_id: int) -> EnvStep:
        """Apply one action. Raises RuntimeError if the episode is over."""

    def exploration_support(self) -> np.ndarray | None:
        """Optional per-state subset of likely-good action ids for guided
        epsilon-exploration; None means explore over the full set."""
        return None
