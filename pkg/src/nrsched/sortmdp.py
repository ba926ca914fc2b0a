"""Selection-sort MDP: flow features, sort episodes, reward vectors and scalarization."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .simcore import DataFlow, Direction, TtiOutcome

N_FEATURES = 6


class FeatureVector(NamedTuple):
    time_since_scheduled: float
    traffic_type: int
    buffer_bits: float
    is_uplink: int
    is_new_tx: int
    is_retx: int

    def as_array(self) -> np.ndarray:
        return np.array(self, dtype=float)


def extract_features(flow: DataFlow, now: int, fb_saturation: float) -> FeatureVector:
    if flow.tti_last_scheduled is None:
        since = now + 1
    else:
        since = now - flow.tti_last_scheduled
    buffered = fb_saturation if flow.is_full_buffer else flow.buffer_bits
    return FeatureVector(
        float(since),
        int(flow.group),
        float(buffered),
        int(flow.direction is Direction.UPLINK),
        int(flow.is_new_transmission),
        int(flow.is_retransmission),
    )


def feature_matrix(flows: Sequence[DataFlow], now: int, fb_saturation: float) -> np.ndarray:
    out = np.empty((len(flows), N_FEATURES))
    for i, f in enumerate(flows):
        out[i] = extract_features(f, now, fb_saturation)
    return out


@dataclass
class FeatureStats:
    mean: np.ndarray | None = None
    std: np.ndarray | None = None

    @property
    def finalized(self) -> bool:
        return self.mean is not None

    @classmethod
    def fit(cls, corpus: np.ndarray) -> "FeatureStats":
        corpus = np.asarray(corpus, dtype=float)
        if corpus.ndim != 2 or len(corpus) == 0:
            raise ValueError("need a nonempty (samples, features) corpus")
        mean = corpus.mean(axis=0)
        std = corpus.std(axis=0)
        std[std <= 0] = 1.0
        return cls(mean, std)

    @classmethod
    def identity(cls, dim: int = N_FEATURES) -> "FeatureStats":
        return cls(np.zeros(dim), np.ones(dim))


def normalize(x, stats: FeatureStats) -> np.ndarray:
    if not stats.finalized:
        raise RuntimeError("feature statistics have not been computed yet")
    return (np.asarray(x, dtype=float) - stats.mean) / stats.std


@dataclass
class SortEpisode:
    original: tuple
    remaining: list = field(default_factory=list)
    output: list = field(default_factory=list)
    k: int = 0

    @classmethod
    def start(cls, items) -> "SortEpisode":
        items = list(items)
        return cls(tuple(items), items)

    @property
    def n(self) -> int:
        return len(self.original)

    @property
    def action_space_size(self) -> int:
        return len(self.remaining)

    @property
    def done(self) -> bool:
        return not self.remaining


def episode_step(ep: SortEpisode, action: int) -> SortEpisode:
    """Move ``remaining[action]`` to the end of the output list (0-based index)."""
    if not 0 <= action < len(ep.remaining):
        raise ValueError(f"action {action} outside [0, {len(ep.remaining) - 1}] at step {ep.k}")
    ep.output.append(ep.remaining.pop(action))
    ep.k += 1
    return ep


def apply_actions(items: Sequence, actions: Sequence[int]) -> list:
    ep = SortEpisode.start(items)
    for a in actions:
        episode_step(ep, int(a))
    return ep.output


def order_indices(n: int, actions: Sequence[int]) -> np.ndarray:
    """Original-list indices in the order the actions select them."""
    return np.array(apply_actions(range(n), actions), dtype=int)


@dataclass(frozen=True)
class RewardVector:
    fb: float
    voip: float

    def as_array(self) -> np.ndarray:
        return np.array([self.fb, self.voip], dtype=float)


@dataclass(frozen=True)
class RewardNorms:
    """``fb`` is divided by ``fb_divisor``; ``voip`` is multiplied by ``voip_scale``."""

    fb_divisor: float = 200000.0
    voip_scale: float = 0.01

    def scales(self) -> np.ndarray:
        return np.array([1.0 / self.fb_divisor, self.voip_scale])


IDENTITY_NORMS = RewardNorms(1.0, 1.0)


def compute_reward_vector(outcome: TtiOutcome) -> RewardVector:
    return RewardVector(float(outcome.fb_bits), -float(outcome.voip_violations))


def scalarize(r: RewardVector, omega, norms: RewardNorms = RewardNorms()) -> float:
    omega = np.asarray(omega, dtype=float)
    vec = r.as_array() * norms.scales()
    if omega.shape != vec.shape:
        raise ValueError(f"preference has shape {omega.shape}, reward has {vec.shape}")
    if not np.all(np.isfinite(omega)):
        raise ValueError("preference entries must be finite")
    return float(omega @ vec)
