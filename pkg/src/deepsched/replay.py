"""Prioritized replay: array-backed sum tree with batched O(log n) proportional sampling."""

from __future__ import annotations

import numpy as np


class SumTree:
    def __init__(self, capacity: int):
        self.capacity = int(capacity)
        size = 1
        while size < self.capacity:
            size *= 2
        self.leaves = size
        self.tree = np.zeros(2 * size)

    @property
    def total(self) -> float:
        return float(self.tree[1])

    def get(self, idx) -> np.ndarray:
        return self.tree[np.asarray(idx) + self.leaves]

    def update(self, idx, values) -> None:
        pos = np.atleast_1d(np.asarray(idx, dtype=np.int64)) + self.leaves
        self.tree[pos] = values
        pos = np.unique(pos // 2)
        while pos[0] >= 1:
            self.tree[pos] = self.tree[2 * pos] + self.tree[2 * pos + 1]
            if pos[0] == 1:
                break
            pos = np.unique(pos // 2)

    def find(self, mass: np.ndarray) -> np.ndarray:
        """Leaf index whose cumulative-weight interval contains each mass value."""
        mass = np.array(mass, dtype=np.float64, copy=True)
        idx = np.ones(mass.shape, dtype=np.int64)
        while idx[0] < self.leaves:
            left = self.tree[2 * idx]
            right = mass >= left
            mass -= np.where(right, left, 0.0)
            idx = 2 * idx + right
        return idx - self.leaves


class ReplayStore:
    """FIFO experience store with sampling probability proportional to priority**omega."""

    def __init__(self, capacity: int, state_dim: int, n_actions: int, omega: float = 0.5,
                 rng: np.random.Generator | None = None):
        self.capacity = int(capacity)
        self.omega = float(omega)
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.states = np.zeros((capacity, state_dim))
        self.next_states = np.zeros((capacity, state_dim))
        self.branch = np.zeros(capacity, dtype=np.int64)
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.masks = np.zeros((capacity, n_actions), dtype=bool)
        self.next_masks = np.zeros((capacity, n_actions), dtype=bool)
        self.priority = np.zeros(capacity)
        self.tree = SumTree(capacity)
        self.size = 0
        self.head = 0

    def __len__(self) -> int:
        return self.size

    def max_priority(self) -> float:
        return float(self.priority[:self.size].max()) if self.size else 1.0

    def add(self, state, action, reward, next_state, mask, next_mask, branch=0, priority=None) -> int:
        if not mask[action]:
            raise ValueError("stored action is invalid under its mask")
        i = self.head
        self.states[i] = state
        self.next_states[i] = next_state
        self.branch[i] = branch
        self.actions[i] = action
        self.rewards[i] = reward
        self.masks[i] = mask
        self.next_masks[i] = next_mask
        p = self.max_priority() if priority is None else float(priority)
        if p <= 0:
            raise ValueError("priority must be positive")
        self.priority[i] = p
        self.tree.update(i, p ** self.omega)
        self.head = (self.head + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        return i

    def update_priorities(self, idx, priorities) -> None:
        priorities = np.asarray(priorities, dtype=np.float64)
        if np.any(priorities <= 0):
            raise ValueError("priorities must be positive")
        idx = np.asarray(idx)
        self.priority[idx] = priorities
        self.tree.update(idx, priorities ** self.omega)

    def probabilities(self) -> np.ndarray:
        w = self.priority[:self.size] ** self.omega
        return w / w.sum()

    def sample_indices(self, n: int) -> np.ndarray:
        total = self.tree.total
        idx = self.tree.find(self.rng.random(n) * total)
        # guard against float round-off landing past the filled region
        bad = idx >= self.size
        while np.any(bad):
            idx[bad] = self.tree.find(self.rng.random(int(bad.sum())) * total)
            bad = idx >= self.size
        return idx

    def sample(self, n: int, weight_exponent: float):
        """Batch indices, the batch arrays and max-normalized importance weights."""
        if self.size < n:
            raise ValueError(f"store holds {self.size} tuples, need {n}")
        idx = self.sample_indices(n)
        p = self.tree.get(idx) / self.tree.total
        w = (self.size * p) ** (-weight_exponent)
        w = w / w.max()
        batch = {
            "states": self.states[idx], "next_states": self.next_states[idx],
            "branch": self.branch[idx], "actions": self.actions[idx],
            "rewards": self.rewards[idx], "masks": self.masks[idx],
            "next_masks": self.next_masks[idx],
        }
        return idx, batch, w
