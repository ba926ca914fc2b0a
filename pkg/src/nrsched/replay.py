"""Sequence replay: FIFO ring of whole sort episodes with proportional prioritization."""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

PRIORITY_EPS = 1e-6


@dataclass
class SortSequence:
    """One TTI of experience: (X^-, a_1..a_N, r, X_next)."""

    features: np.ndarray  # (N, F), raw (unnormalized) flow features
    actions: np.ndarray  # (N,), 0-based indices into the shrinking input list
    reward: float
    next_features: np.ndarray  # (M, F), M may be 0

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.actions = np.asarray(self.actions, dtype=np.int64)
        self.next_features = np.asarray(self.next_features, dtype=float).reshape(-1, self.features.shape[1])
        self.validate()

    def validate(self) -> None:
        n = len(self.features)
        if n == 0:
            raise ValueError("a sort sequence needs at least one flow")
        if self.actions.shape != (n,):
            raise ValueError(f"expected {n} actions, got shape {self.actions.shape}")
        bounds = n - np.arange(n)
        if np.any(self.actions < 0) or np.any(self.actions >= bounds):
            raise ValueError("actions are not a valid selection-sort trace")
        if not np.isfinite(self.reward):
            raise ValueError("reward must be finite")


class SumTree:
    """Binary sum tree over a power-of-two leaf array."""

    def __init__(self, capacity: int):
        self.leaves = 1
        while self.leaves < capacity:
            self.leaves *= 2
        self.tree = np.zeros(2 * self.leaves)

    @property
    def total(self) -> float:
        return float(self.tree[1])

    def set(self, index: int, value: float) -> None:
        i = index + self.leaves
        self.tree[i] = value
        i //= 2
        while i >= 1:
            self.tree[i] = self.tree[2 * i] + self.tree[2 * i + 1]
            i //= 2

    def rebuild(self, values: np.ndarray) -> None:
        self.tree[:] = 0.0
        self.tree[self.leaves : self.leaves + len(values)] = values
        for i in range(self.leaves - 1, 0, -1):
            self.tree[i] = self.tree[2 * i] + self.tree[2 * i + 1]

    def find(self, u: np.ndarray) -> np.ndarray:
        """Leaf indices whose cumulative interval contains each ``u`` in [0, total)."""
        u = np.array(u, dtype=float)
        idx = np.ones(len(u), dtype=np.int64)
        while idx[0] < self.leaves:
            left = 2 * idx
            lv = self.tree[left]
            right = u >= lv
            u = np.where(right, u - lv, u)
            idx = np.where(right, left + 1, left)
        return idx - self.leaves


class ReplayBuffer:
    """Thread-safe FIFO replay of :class:`SortSequence` records.

    ``mode="uniform"`` ignores priorities entirely (plain DQN sampling).
    Handles returned by :meth:`sample` are insertion ids; updating an id
    whose slot has since been overwritten is counted and ignored.
    """

    def __init__(self, capacity=131072, warmup=20000, alpha=0.6, mode="prioritized"):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        if mode not in ("prioritized", "uniform"):
            raise ValueError(f"unknown replay mode {mode!r}")
        self.capacity = capacity
        self.warmup = warmup
        self.alpha = alpha
        self.mode = mode
        self.items: list = [None] * capacity
        self.ids = np.full(capacity, -1, dtype=np.int64)
        self.priorities = np.zeros(capacity)
        self.tree = SumTree(capacity)
        self.max_priority = 1.0
        self.n_pushed = 0
        self.stale_updates = 0
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return min(self.n_pushed, self.capacity)

    def is_ready(self) -> bool:
        return len(self) >= self.warmup

    def push(self, seq: SortSequence) -> int:
        seq.validate()
        with self._lock:
            handle = self.n_pushed
            slot = handle % self.capacity
            self.items[slot] = seq
            self.ids[slot] = handle
            self.priorities[slot] = self.max_priority
            self.tree.set(slot, self.max_priority**self.alpha)
            self.n_pushed += 1
            return handle

    def get(self, handle: int) -> SortSequence | None:
        slot = handle % self.capacity
        return self.items[slot] if self.ids[slot] == handle else None

    def oldest_handle(self) -> int:
        return max(0, self.n_pushed - self.capacity)

    def sample(self, batch: int, alpha=None, beta=0.4, rng=None):
        """Draw ``batch`` sequences with replacement.

        Returns (sequences, importance weights, handles).
        """
        rng = np.random.default_rng() if rng is None else rng
        with self._lock:
            if not self.is_ready() or len(self) == 0:
                raise RuntimeError(f"replay holds {len(self)} sequences, needs {self.warmup}")
            n = len(self)
            if self.mode == "uniform":
                slots = rng.integers(0, n, size=batch)
                weights = np.ones(batch)
            else:
                if alpha is not None and alpha != self.alpha:
                    self.alpha = alpha
                    self.tree.rebuild(self.priorities[:n] ** alpha)
                total = self.tree.total
                slots = self.tree.find(rng.random(batch) * total)
                # float round-off can land on an empty leaf past the filled region
                slots = np.minimum(slots, n - 1)
                probs = self.priorities[slots] ** self.alpha / total
                # normalized by the batch maximum; a buffer-wide minimum lets one
                # near-zero priority shrink every weight (and the step size) toward 0
                weights = (n * probs) ** (-beta)
                weights = weights / weights.max()
            seqs = [self.items[s] for s in slots]
            handles = self.ids[slots].copy()
        return seqs, weights, handles

    def update_priority(self, handle: int, td_error: float) -> None:
        prio = abs(float(td_error)) + PRIORITY_EPS
        with self._lock:
            slot = int(handle) % self.capacity
            if self.ids[slot] != handle:
                self.stale_updates += 1
                return
            self.priorities[slot] = prio
            self.tree.set(slot, prio**self.alpha)
            if prio > self.max_priority:
                self.max_priority = prio

    def update_priorities(self, handles, td_errors) -> None:
        for h, e in zip(handles, td_errors):
            self.update_priority(int(h), float(e))

    def feature_corpus(self) -> np.ndarray:
        """All stored input-list feature rows, oldest first."""
        with self._lock:
            n = len(self)
            start = self.oldest_handle()
            rows = [self.items[h % self.capacity].features for h in range(start, start + n)]
        return np.concatenate(rows, axis=0)
