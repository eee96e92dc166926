from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Transition:
    obs: np.ndarray
    action: int
    reward: float
    next_obs: np.ndarray
    terminal: bool
    steps: int = 1  # primitive steps covered; >1 only for option-level transitions


@dataclass(frozen=True)
class Batch:
    indices: np.ndarray
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    terminals: np.ndarray
    steps: np.ndarray

    def __len__(self):
        return len(self.actions)


class UnderfullBufferError(ValueError):
    pass


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions stored column-wise."""

    def __init__(self, capacity: int, obs_shape=(), obs_dtype=np.uint8):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.obs = np.zeros((capacity, *obs_shape), dtype=obs_dtype)
        self.next_obs = np.zeros((capacity, *obs_shape), dtype=obs_dtype)
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity, dtype=np.float64)
        self.terminals = np.zeros(capacity, dtype=bool)
        self.steps = np.ones(capacity, dtype=np.int64)
        self.insert_count = 0

    def __len__(self):
        return min(self.insert_count, self.capacity)

    def push(self, tr: Transition) -> ReplayBuffer:
        i = self.insert_count % self.capacity
        self.obs[i] = tr.obs
        self.next_obs[i] = tr.next_obs
        self.actions[i] = tr.action
        self.rewards[i] = tr.reward
        self.terminals[i] = tr.terminal
        self.steps[i] = tr.steps
        self.insert_count += 1
        return self

    def _slot(self, age: int) -> int:
        """Storage slot of the age-th oldest live transition."""
        oldest = max(0, self.insert_count - self.capacity)
        return (oldest + age) % self.capacity

    def __getitem__(self, age: int) -> Transition:
        if not 0 <= age < len(self):
            raise IndexError(age)
        i = self._slot(age)
        return Transition(self.obs[i].copy(), int(self.actions[i]), float(self.rewards[i]),
                          self.next_obs[i].copy(), bool(self.terminals[i]), int(self.steps[i]))

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        """Uniform with replacement over live transitions."""
        n = len(self)
        if n < batch_size or batch_size <= 0:
            raise UnderfullBufferError(f"cannot sample {batch_size} from a buffer holding {n}")
        idx = rng.integers(0, n, size=batch_size)
        return Batch(idx, self.obs[idx], self.actions[idx], self.rewards[idx],
                     self.next_obs[idx], self.terminals[idx], self.steps[idx])
