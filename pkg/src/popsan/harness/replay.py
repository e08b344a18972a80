"""Fixed-capacity ring buffer of transitions with uniform sampling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError


@dataclass
class Transition:
    obs: np.ndarray
    action: np.ndarray
    reward: float
    next_obs: np.ndarray
    done: bool


@dataclass
class Batch:
    obs: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    next_obs: np.ndarray
    done: np.ndarray

    def __len__(self) -> int:
        return len(self.reward)


class ReplayBuffer:
    def __init__(self, capacity: int, obs_dim: int, act_dim: int):
        if capacity < 1:
            raise ContractError(f"capacity must be positive, got {capacity}")
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.action = np.zeros((capacity, act_dim))
        self.reward = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.done = np.zeros(capacity)
        self.cursor = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def add(self, t: Transition) -> None:
        i = self.cursor
        self.obs[i] = t.obs
        self.action[i] = t.action
        self.reward[i] = t.reward
        self.next_obs[i] = t.next_obs
        self.done[i] = float(t.done)
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        if batch_size >= self.capacity:
            raise ContractError(f"batch size {batch_size} must be smaller than capacity {self.capacity}")
        if self.size < batch_size:
            raise ContractError(f"buffer holds {self.size} transitions, batch of {batch_size} requested")
        return rng.integers(0, self.size, size=batch_size)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        idx = self.sample_indices(batch_size, rng)
        return Batch(self.obs[idx], self.action[idx], self.reward[idx], self.next_obs[idx], self.done[idx])

    def tensors(self, prefix: str = "buffer") -> dict[str, np.ndarray]:
        n = self.size
        return {
            f"{prefix}.meta": np.array([self.capacity, self.cursor, self.size], dtype=np.float64),
            f"{prefix}.obs": self.obs[:n],
            f"{prefix}.action": self.action[:n],
            f"{prefix}.reward": self.reward[:n],
            f"{prefix}.next_obs": self.next_obs[:n],
            f"{prefix}.done": self.done[:n],
        }

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray], prefix: str = "buffer") -> "ReplayBuffer":
        capacity, cursor, size = (int(x) for x in tensors[f"{prefix}.meta"])
        obs = tensors[f"{prefix}.obs"]
        action = tensors[f"{prefix}.action"]
        buf = cls(capacity, obs.shape[-1] if obs.ndim == 2 else 0, action.shape[-1] if action.ndim == 2 else 0)
        buf.obs[:size] = obs
        buf.action[:size] = action
        buf.reward[:size] = tensors[f"{prefix}.reward"]
        buf.next_obs[:size] = tensors[f"{prefix}.next_obs"]
        buf.done[:size] = tensors[f"{prefix}.done"]
        buf.cursor, buf.size = cursor, size
        return buf
