"""Time-domain scheduling policies: interface plus round-robin and proportional-fair baselines."""

from __future__ import annotations

import math
from typing import Callable, Protocol, Sequence

from .simcore import DataFlow, Group, ResourceGridConfig, TtiOutcome


class TdPolicy(Protocol):
    """Sorts a TTI's flows into decreasing priority."""

    def sort(self, flows: Sequence[DataFlow], tti: int) -> list[DataFlow]: ...

    def observe(self, outcome: TtiOutcome, flows: Sequence[DataFlow]) -> None: ...


def rr_weight(flow: DataFlow, now: int) -> float:
    if flow.tti_last_scheduled is None:
        return math.inf
    return float(now - flow.tti_last_scheduled)


class PfState:
    """Per-flow EMA of delivered bits per TTI."""

    def __init__(self, smoothing: float = 0.01, floor: float = 1.0):
        if not 0.0 < smoothing <= 1.0:
            raise ValueError("smoothing must lie in (0, 1]")
        if not floor > 0:
            raise ValueError("floor must be positive")
        self.smoothing = smoothing
        self.floor = floor
        self.avg: dict[int, float] = {}

    def mean(self, flow_id: int) -> float:
        return max(self.avg.get(flow_id, self.floor), self.floor)

    def update(self, delivered: dict[int, int], flow_ids) -> None:
        a = self.smoothing
        for fid in flow_ids:
            prev = self.avg.get(fid, self.floor)
            self.avg[fid] = max((1.0 - a) * prev + a * delivered.get(fid, 0), self.floor)


def expected_throughput(flow: DataFlow, grid: ResourceGridConfig) -> float:
    return float(min(flow.buffer_bits, grid.max_grant_bits))


def pf_weight(flow: DataFlow, state: PfState, grid: ResourceGridConfig) -> float:
    return expected_throughput(flow, grid) / state.mean(flow.flow_id)


def baseline_sort(
    flows: Sequence[DataFlow],
    weight: Callable[[DataFlow], float],
    voip_first: bool = False,
) -> list[DataFlow]:
    """Sort by (retransmission first, [VoIP first], weight desc, flow_id asc)."""

    def key(f: DataFlow):
        k = [not f.is_retransmission]
        if voip_first:
            k.append(f.group is not Group.VOIP)
        k += [-weight(f), f.flow_id]
        return tuple(k)

    return sorted(flows, key=key)


class RoundRobin:
    name = "round_robin"

    def __init__(self, voip_first: bool = False):
        self.voip_first = voip_first

    def sort(self, flows, tti):
        return baseline_sort(flows, lambda f: rr_weight(f, tti), self.voip_first)

    def observe(self, outcome, flows):
        pass


class ProportionalFair:
    name = "proportional_fair"

    def __init__(self, grid: ResourceGridConfig, smoothing: float = 0.01, floor: float = 1.0,
                 voip_first: bool = False):
        self.grid = grid
        self.state = PfState(smoothing, floor)
        self.voip_first = voip_first

    def sort(self, flows, tti):
        return baseline_sort(flows, lambda f: pf_weight(f, self.state, self.grid), self.voip_first)

    def observe(self, outcome, flows):
        # every known flow decays, served or not
        self.state.update(outcome.report.delivered_bits, [f.flow_id for f in flows])
