"""Environments the actor drives: the cell simulator and a toy integer-sorting task.

Both expose ``reset() -> features`` and ``step(order) -> (reward, next features)``
where ``order`` lists indices into the current feature rows, highest priority first.
"""

from __future__ import annotations

import numpy as np

from .simcore import ResourceGridConfig, Simulator, TrafficConfig
from .sortmdp import N_FEATURES, RewardNorms, compute_reward_vector, feature_matrix, scalarize


class SchedulingEnv:
    def __init__(self, traffic: TrafficConfig, grid: ResourceGridConfig, omega, norms: RewardNorms,
                 fb_saturation: float, seed=None):
        self.sim = Simulator(traffic, grid, seed)
        self.omega = np.asarray(omega, dtype=float)
        self.norms = norms
        self.fb_saturation = fb_saturation
        self.flows = []
        self.last_outcome = None
        self.last_reward_vector = None

    def reset(self) -> np.ndarray:
        self.flows = self.sim.advance_tti()
        return feature_matrix(self.flows, self.sim.now, self.fb_saturation)

    def step(self, order):
        outcome = self.sim.step([self.flows[i] for i in order])
        rv = compute_reward_vector(outcome)
        self.last_outcome = outcome
        self.last_reward_vector = rv
        return scalarize(rv, self.omega, self.norms), self.reset()


def inversions(values) -> int:
    """Number of out-of-order pairs (ascending is sorted); brute force."""
    v = list(values)
    return sum(1 for i in range(len(v)) for j in range(i + 1, len(v)) if v[i] > v[j])


class ToySortEnv:
    """Sort ``n`` distinct integers ascending; reward is minus the inversion count.

    Each integer becomes a feature row with the value in column 0 and zeros elsewhere.
    """

    def __init__(self, n: int = 4, max_value: int = 100, seed=None):
        if max_value < n:
            raise ValueError("need at least n distinct values")
        self.n = n
        self.max_value = max_value
        self.rng = np.random.default_rng(seed)
        self.values = None

    def draw(self) -> np.ndarray:
        return self.rng.choice(self.max_value, size=self.n, replace=False)

    @staticmethod
    def features_of(values) -> np.ndarray:
        X = np.zeros((len(values), N_FEATURES))
        X[:, 0] = values
        return X

    def reset(self) -> np.ndarray:
        self.values = self.draw()
        return self.features_of(self.values)

    def step(self, order):
        reward = -float(inversions(self.values[np.asarray(order, dtype=int)]))
        return reward, self.reset()
