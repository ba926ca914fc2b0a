"""TTI-loop cell simulator: traffic, buffers, two-step FD allocation and transmission.

One simulator instance is a single FDD cell with independent uplink and
downlink PRB pools and a shared control-channel (PDCCH) grant counter.
The PHY is abstracted to a constant number of bits per PRB and a
Bernoulli transport-block failure.
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class Group(enum.IntEnum):
    """Traffic type; the integer value is the feature code."""

    FULL_BUFFER = 0
    VOIP = 1


class Direction(enum.IntEnum):
    DOWNLINK = 0
    UPLINK = 1


class QosKind(enum.Enum):
    BEST_EFFORT = "best_effort"
    MAX_DELAY = "max_delay"


@dataclass(frozen=True)
class QosRequirement:
    kind: QosKind = QosKind.BEST_EFFORT
    max_delay: float | None = None

    def __post_init__(self):
        if self.kind is QosKind.MAX_DELAY:
            if self.max_delay is None or not self.max_delay > 0:
                raise ValueError("MaxDelay QoS needs a positive max_delay")
        elif self.max_delay is not None:
            raise ValueError("BestEffort QoS carries no max_delay")

    @classmethod
    def best_effort(cls) -> "QosRequirement":
        return cls(QosKind.BEST_EFFORT)

    @classmethod
    def delay_bound(cls, seconds: float) -> "QosRequirement":
        return cls(QosKind.MAX_DELAY, float(seconds))


@dataclass
class Packet:
    size: int
    created_at: int
    delivered_at: int | None = None
    remaining: int = -1

    def __post_init__(self):
        if self.size <= 0:
            raise ValueError("packet size must be positive")
        if self.remaining < 0:
            self.remaining = self.size


@dataclass
class DataFlow:
    flow_id: int
    group: Group
    direction: Direction
    qos: QosRequirement
    buffer: deque = field(default_factory=deque)
    tti_last_scheduled: int | None = None
    is_retransmission: bool = False
    # delays (in TTIs) of packets completed during the current TTI
    delivered_now: list = field(default_factory=list)

    @property
    def is_full_buffer(self) -> bool:
        return self.group is Group.FULL_BUFFER

    @property
    def buffer_bits(self) -> float:
        if self.is_full_buffer:
            return math.inf
        return sum(p.remaining for p in self.buffer)

    @property
    def has_data(self) -> bool:
        return self.is_full_buffer or bool(self.buffer)

    @property
    def is_new_transmission(self) -> bool:
        return self.has_data and not self.is_retransmission


@dataclass(frozen=True)
class ResourceGridConfig:
    prbs_per_direction: int = 24
    bits_per_prb: int = 672
    pdcch_capacity: int = 8
    tti_duration: float = 0.5e-3
    bler: float = 0.01

    def __post_init__(self):
        if self.prbs_per_direction <= 0 or self.bits_per_prb <= 0 or self.pdcch_capacity <= 0:
            raise ValueError("grid counts must be positive")
        if not self.tti_duration > 0:
            raise ValueError("tti_duration must be positive")
        if not 0.0 <= self.bler < 1.0:
            raise ValueError("bler must lie in [0, 1)")

    @property
    def max_grant_bits(self) -> int:
        return self.prbs_per_direction * self.bits_per_prb


@dataclass(frozen=True)
class TrafficConfig:
    n_voip: int = 10
    full_buffer: bool = True
    voip_packet_bits: int = 320
    voip_period_ttis: int = 40
    voip_max_delay: float = 0.1

    def __post_init__(self):
        if self.n_voip < 0:
            raise ValueError("n_voip must be >= 0")
        if self.voip_packet_bits <= 0 or self.voip_period_ttis <= 0:
            raise ValueError("VoIP packet size and period must be positive")


@dataclass
class TtiAllocation:
    control_grants: list = field(default_factory=list)
    data_grants: dict = field(default_factory=dict)
    directions: dict = field(default_factory=dict)

    def prbs_used(self, direction: Direction) -> int:
        return sum(n for fid, n in self.data_grants.items() if self.directions[fid] is direction)

    def check(self, grid: ResourceGridConfig, flow_ids: Iterable[int] | None = None) -> None:
        """Raise AssertionError if any allocation invariant is broken."""
        assert len(self.control_grants) <= grid.pdcch_capacity
        assert len(set(self.control_grants)) == len(self.control_grants)
        assert set(self.data_grants) <= set(self.control_grants)
        assert all(n > 0 for n in self.data_grants.values())
        for d in Direction:
            assert self.prbs_used(d) <= grid.prbs_per_direction
        if flow_ids is not None:
            assert set(self.control_grants) <= set(flow_ids)


def fd_schedule(priority_list: Sequence[DataFlow], grid: ResourceGridConfig) -> TtiAllocation:
    """Turn a TD priority list into control and data grants.

    Control goes to the first ``pdcch_capacity`` flows.  Data PRBs are then
    handed out in the same order; a control-granted flow that gets no PRBs
    loses its control grant.
    """
    candidates = list(priority_list[: grid.pdcch_capacity])
    remaining = {d: grid.prbs_per_direction for d in Direction}
    alloc = TtiAllocation()
    for flow in candidates:
        free = remaining[flow.direction]
        if flow.is_full_buffer:
            want = free
        else:
            want = min(free, math.ceil(flow.buffer_bits / grid.bits_per_prb))
        if want <= 0:
            continue
        remaining[flow.direction] -= want
        alloc.control_grants.append(flow.flow_id)
        alloc.data_grants[flow.flow_id] = want
        alloc.directions[flow.flow_id] = flow.direction
    return alloc


def qos_satisfied(flow: DataFlow, now: int, tti_duration: float) -> bool:
    """Per-TTI delay check: no late delivery this TTI and no overdue packet waiting."""
    if flow.qos.kind is not QosKind.MAX_DELAY:
        raise ValueError(f"flow {flow.flow_id} has no delay requirement")
    bound = flow.qos.max_delay
    if any(exceeds_bound(d * tti_duration, bound) for d in flow.delivered_now):
        return False
    return not any(exceeds_bound((now - p.created_at) * tti_duration, bound) for p in flow.buffer)


def exceeds_bound(delay_s: float, bound: float) -> bool:
    # tolerance keeps an exact 200-TTI delay on the satisfied side of a 0.1 s bound
    return delay_s > bound * (1.0 + 1e-9)


@dataclass
class DeliveryReport:
    delivered_bits: dict = field(default_factory=dict)
    failed: list = field(default_factory=list)
    completed_packets: list = field(default_factory=list)  # (flow, packet)


@dataclass
class TtiOutcome:
    tti: int
    allocation: TtiAllocation
    report: DeliveryReport
    fb_bits: int
    dl_bits: int
    ul_bits: int
    voip_violations: int
    n_voip_flows: int


@dataclass
class MetricsLog:
    ttis: list = field(default_factory=list)
    dl_bits: list = field(default_factory=list)
    ul_bits: list = field(default_factory=list)
    n_scheduled: list = field(default_factory=list)
    # (group name, created_tti, delivered_tti or None, delay_s)
    delays: list = field(default_factory=list)
    reward_fb: list = field(default_factory=list)
    reward_voip: list = field(default_factory=list)

    def voip_delays(self) -> np.ndarray:
        return np.array([d for g, _, _, d in self.delays if g == Group.VOIP.name], dtype=float)


class Simulator:
    """Single-cell TTI loop.

    Call :meth:`advance_tti` to obtain the flows to sort, then :meth:`step`
    with the priority list (or :func:`fd_schedule` + :meth:`transmit` by hand).
    """

    def __init__(self, traffic: TrafficConfig, grid: ResourceGridConfig, seed=None):
        self.traffic = traffic
        self.grid = grid
        self.rng = np.random.default_rng(seed)
        self.now = 0
        self.metrics = MetricsLog()
        self.flows: dict[int, DataFlow] = {}
        if traffic.full_buffer:
            self.flows[0] = DataFlow(0, Group.FULL_BUFFER, Direction.DOWNLINK, QosRequirement.best_effort())
        voip_qos = QosRequirement.delay_bound(traffic.voip_max_delay)
        for user in range(traffic.n_voip):
            for k, direction in enumerate((Direction.DOWNLINK, Direction.UPLINK)):
                fid = 1 + 2 * user + k
                self.flows[fid] = DataFlow(fid, Group.VOIP, direction, voip_qos)
        self.voip_flows = [f for f in self.flows.values() if f.group is Group.VOIP]

    def advance_tti(self) -> list[DataFlow]:
        self.now += 1
        for f in self.flows.values():
            f.delivered_now = []
        if self.now % self.traffic.voip_period_ttis == 0:
            for f in self.voip_flows:
                f.buffer.append(Packet(self.traffic.voip_packet_bits, self.now))
        return [f for f in self.flows.values() if f.has_data]

    def transmit(self, alloc: TtiAllocation, rng=None) -> DeliveryReport:
        rng = self.rng if rng is None else rng
        report = DeliveryReport()
        bits_per_prb = self.grid.bits_per_prb
        for fid in alloc.control_grants:
            flow = self.flows[fid]
            flow.tti_last_scheduled = self.now
            if self.grid.bler > 0 and rng.random() < self.grid.bler:
                flow.is_retransmission = True
                report.failed.append(fid)
                report.delivered_bits[fid] = 0
                continue
            budget = alloc.data_grants[fid] * bits_per_prb
            if flow.is_full_buffer:
                sent = budget
            else:
                sent = 0
                while flow.buffer and budget > 0:
                    head = flow.buffer[0]
                    chunk = min(head.remaining, budget)
                    head.remaining -= chunk
                    budget -= chunk
                    sent += chunk
                    if head.remaining == 0:
                        head.delivered_at = self.now
                        flow.buffer.popleft()
                        flow.delivered_now.append(self.now - head.created_at)
                        report.completed_packets.append((flow, head))
            flow.is_retransmission = False
            report.delivered_bits[fid] = sent
        for flow, pkt in report.completed_packets:
            delay = (pkt.delivered_at - pkt.created_at) * self.grid.tti_duration
            self.metrics.delays.append((flow.group.name, pkt.created_at, pkt.delivered_at, delay))
        return report

    def step(self, priority_list: Sequence[DataFlow]) -> TtiOutcome:
        """FD-schedule ``priority_list``, transmit, and log this TTI."""
        alloc = fd_schedule(priority_list, self.grid)
        report = self.transmit(alloc)
        dl = ul = fb = 0
        for fid, bits in report.delivered_bits.items():
            flow = self.flows[fid]
            if flow.direction is Direction.DOWNLINK:
                dl += bits
            else:
                ul += bits
            if flow.is_full_buffer:
                fb += bits
        tti = self.grid.tti_duration
        violations = sum(not qos_satisfied(f, self.now, tti) for f in self.voip_flows)
        m = self.metrics
        m.ttis.append(self.now)
        m.dl_bits.append(dl)
        m.ul_bits.append(ul)
        m.n_scheduled.append(len(alloc.control_grants))
        m.reward_fb.append(fb)
        m.reward_voip.append(-violations)
        return TtiOutcome(self.now, alloc, report, fb, dl, ul, violations, len(self.voip_flows))

    def finalize(self) -> MetricsLog:
        """Log still-buffered packets with their current age; call once at run end."""
        for f in self.voip_flows:
            for p in f.buffer:
                age = (self.now - p.created_at) * self.grid.tti_duration
                self.metrics.delays.append((f.group.name, p.created_at, None, age))
        return self.metrics
