import logging
import math
from dataclasses import dataclass, field, fields
from typing import Sequence, Union

import numpy as np
import pandas as pd

from intent_rrs.channel.channel import SEGrid
from intent_rrs.intent import settings as intent_settings
from intent_rrs.intent.intent import (
    IntentDrift,
    check_fulfillment,
    slice_drift,
    ue_drift,
)
from intent_rrs.scenario.scenario import NetworkScenario, SliceSpec

from . import settings

logger = logging.getLogger(__name__)


def rbg_to_rbs(
    rbg_index: int,
    rbg_count: int = settings.rbg_count,
    rb_count: int = settings.rb_count,
) -> range:
    """
    RB indices of a resource block group.

    Parameters
    ----------
    rbg_index : int
        Group index in ``[0, rbg_count)``.
    rbg_count, rb_count : int
        Grid size; `rb_count` must be a multiple of `rbg_count`.

    Returns
    -------
    range
        Contiguous block of ``rb_count // rbg_count`` RBs.
    """
    if not 0 <= rbg_index < rbg_count:
        raise ValueError(f"RBG index {rbg_index} out of [0, {rbg_count})")
    size = rb_count // rbg_count
    return range(rbg_index * size, (rbg_index + 1) * size)


def draw_arrivals(
    rng: np.random.Generator, slice_spec: SliceSpec, tti: float = settings.tti
) -> int:
    """Poisson number of packets requested by one UE during one TTI."""
    if slice_spec.traffic_mean < 0:
        raise ValueError("traffic mean must be >= 0")
    lam = slice_spec.traffic_mean * 1e6 * tti / slice_spec.packet_size
    return int(rng.poisson(lam))


def served_packets(
    se_values: np.ndarray,
    bandwidth: float,
    rb_count: int,
    packet_size: int,
    tti: float = settings.tti,
) -> int:
    """Whole packets the given RBs can carry in one TTI."""
    bits = (
        bandwidth
        * 1e6
        / rb_count
        * float(np.sum(se_values, dtype=float))
        * tti
    )
    return int(math.floor(bits / packet_size))


def served_throughput(
    rb_indices: Sequence[int],
    se_row: np.ndarray,
    bandwidth: float = settings.bandwidth,
    rb_count: int = settings.rb_count,
    packet_size: int = 8192,
    tti: float = settings.tti,
) -> float:
    """
    Packet-quantized capacity of a UE's RBs in one TTI.

    Parameters
    ----------
    rb_indices : Sequence[int]
        RBs allocated to the UE.
    se_row : np.ndarray
        Spectral efficiency of the UE on every RB, in bits/s/Hz.
    bandwidth : float
        Total bandwidth in MHz.
    rb_count : int
        Number of RBs sharing the bandwidth.
    packet_size : int
        Packet size in bits.
    tti : float
        TTI in seconds.

    Returns
    -------
    float
        Served throughput in Mbps, a multiple of one packet per TTI.
    """
    indices = np.asarray(rb_indices, dtype=int)
    if indices.size and (indices.min() < 0 or indices.max() >= len(se_row)):
        raise ValueError("RB index out of range")
    packets = served_packets(
        se_row[indices], bandwidth, rb_count, packet_size, tti
    )
    return packets * packet_size / (tti * 1e6)


def effective_throughput(
    served: float, buffer_bits: float, tti: float = settings.tti
) -> float:
    """
    Throughput actually sent: the served throughput, limited by the buffer
    content expressed as a rate over one TTI.
    """
    if served < 0:
        raise ValueError("served throughput must be >= 0")
    return min(served, buffer_bits / (tti * 1e6))


def avg_buffer_latency(age_histogram: np.ndarray) -> float:
    """Mean age in TTIs of the buffered packets, 0 for an empty buffer."""
    total = int(np.sum(age_histogram))
    if total == 0:
        return 0.0
    ages = np.arange(len(age_histogram))
    return float(np.dot(ages, age_histogram) / total)


def packet_loss_rate(
    drop_history: Sequence[int],
    arrival_history: Sequence[int],
    occupancy_history: Sequence[int],
    n: int,
    window: int = settings.loss_window,
) -> float:
    """
    Windowed packet loss rate at step `n`.

    Dropped packets over steps ``max(1, n - window) .. n`` divided by the
    buffer occupancy at the start of the window plus the packets that
    arrived during it. All histories are 1-based per step, stored from
    index 0, and `occupancy_history[k - 1]` is the occupancy at the start
    of step k.

    Parameters
    ----------
    drop_history, arrival_history, occupancy_history : Sequence[int]
        Per-step packet counts, at least `n` entries each.
    n : int
        Current step, >= 1.
    window : int
        Window length in steps.

    Returns
    -------
    float
        Loss rate in [0, 1]; 0 when nothing was buffered or arrived.
    """
    if n < 1 or n > min(
        len(drop_history), len(arrival_history), len(occupancy_history)
    ):
        raise ValueError(f"histories do not cover step {n}")
    start = max(1, n - window)
    dropped = sum(drop_history[start - 1 : n])
    offered = occupancy_history[start - 1] + sum(
        arrival_history[start - 1 : n]
    )
    if offered == 0:
        return 0.0
    return dropped / offered


@dataclass
class UEBufferState:
    """
    Packet buffer of one UE.

    Attributes
    ----------
    capacity : int
        Buffer size in packets.
    packet_size : int
        Packet size in bits.
    max_latency : int
        Packets older than this many TTIs are dropped.
    age_histogram : np.ndarray
        Number of packets of each age ``0..max_latency``.
    arrival_history, drop_history, occupancy_history : list[int]
        Per-step arrivals, drops and start-of-step occupancy.
    backlog : int
        Packets left after the last transmission, before new arrivals.
    """

    capacity: int
    packet_size: int
    max_latency: int
    age_histogram: np.ndarray = None
    arrival_history: list = field(default_factory=list)
    drop_history: list = field(default_factory=list)
    occupancy_history: list = field(default_factory=list)
    sent_total: int = 0
    backlog: int = 0

    def __post_init__(self):
        if self.age_histogram is None:
            self.age_histogram = np.zeros(self.max_latency + 1, dtype=np.int64)

    @property
    def occupancy(self) -> int:
        return int(self.age_histogram.sum())

    @property
    def occupancy_fraction(self) -> float:
        return self.occupancy / self.capacity

    @property
    def bits(self) -> int:
        return self.occupancy * self.packet_size

    @property
    def arrived_total(self) -> int:
        return int(sum(self.arrival_history))

    @property
    def dropped_total(self) -> int:
        return int(sum(self.drop_history))

    def step(self, arrivals: int, sent_packets: int) -> tuple[int, int]:
        """
        Advance the buffer by one TTI.

        Transmits up to `sent_packets` packets oldest first, ages the
        remaining packets and drops those older than `max_latency`, then
        admits `arrivals` new packets up to capacity.

        Returns
        -------
        tuple[int, int]
            ``(sent, dropped)`` packet counts of the step.
        """
        hist = self.age_histogram
        self.occupancy_history.append(self.occupancy)

        to_send = min(int(sent_packets), self.occupancy)
        sent = to_send
        for age in range(len(hist) - 1, -1, -1):
            if to_send == 0:
                break
            take = min(int(hist[age]), to_send)
            hist[age] -= take
            to_send -= take
        self.backlog = self.occupancy

        dropped = int(hist[-1])
        hist[1:] = hist[:-1].copy()
        hist[0] = 0

        admitted = min(int(arrivals), self.capacity - self.occupancy)
        hist[0] = admitted
        dropped += int(arrivals) - admitted

        self.arrival_history.append(int(arrivals))
        self.drop_history.append(dropped)
        self.sent_total += sent
        return sent, dropped

    def loss_rate(self, window: int = settings.loss_window) -> float:
        return packet_loss_rate(
            self.drop_history,
            self.arrival_history,
            self.occupancy_history,
            len(self.drop_history),
            window,
        )


def step_buffers(
    buffers: Sequence[UEBufferState],
    arrivals: Sequence[int],
    sent_bits: Sequence[int],
) -> tuple[list[int], Sequence[UEBufferState]]:
    """
    Advance several UE buffers by one TTI.

    Parameters
    ----------
    buffers : Sequence[UEBufferState]
        Buffers, updated in place.
    arrivals : Sequence[int]
        Packets arriving at each buffer.
    sent_bits : Sequence[int]
        Bits each UE may transmit; only whole packets are sent.

    Returns
    -------
    tuple[list[int], Sequence[UEBufferState]]
        Packets dropped per buffer and the updated buffers.
    """
    drops = []
    for buf, arrived, bits in zip(buffers, arrivals, sent_bits):
        _, dropped = buf.step(arrived, int(bits) // buf.packet_size)
        drops.append(dropped)
    return drops, buffers


@dataclass(frozen=True)
class UEMetrics:
    """
    Metrics of one UE for one step.

    Throughputs in Mbps, latency in ms, occupancy and loss as fractions.
    `backlog` is the buffer occupancy left after transmission.
    """

    served: float
    effective: float
    buffer_occ: float
    latency: float
    loss: float
    arrivals: float
    mean_se: float
    backlog: float


@dataclass(frozen=True)
class SliceMetrics(UEMetrics):
    """
    Mean metrics of a slice's UEs.

    `backlogged_effective` is the lowest effective throughput among the
    UEs left with a backlog after transmission, inf when none is.
    """

    backlogged_effective: float = math.inf

    @property
    def drained(self) -> bool:
        return math.isinf(self.backlogged_effective)


def slice_aggregate(ue_metrics: Sequence[UEMetrics]) -> SliceMetrics:
    """Arithmetic mean of every metric over the UEs of a slice."""
    if not ue_metrics:
        raise ValueError("slice has no UEs")
    means = {
        f.name: float(np.mean([getattr(m, f.name) for m in ue_metrics]))
        for f in fields(UEMetrics)
    }
    backlogged = [m.effective for m in ue_metrics if m.backlog > 0]
    return SliceMetrics(
        **means, backlogged_effective=min(backlogged, default=math.inf)
    )


@dataclass
class StepMetrics:
    step: int
    ue: list[UEMetrics]
    slices: dict[int, SliceMetrics]


@dataclass
class Allocation:
    """
    RBG allocation of one step.

    Attributes
    ----------
    inter : np.ndarray
        RBG count per slice slot; slot ``i - 1`` holds slice index i.
    intra : dict[int, np.ndarray]
        RBG count per UE of each active slice, keyed by slice index.
    """

    inter: np.ndarray
    intra: dict

    def validate(
        self, scenario: NetworkScenario, rbg_count: int = settings.rbg_count
    ) -> None:
        """Raise `ValueError` unless the allocation is complete and
        consistent with the scenario."""
        inter = np.asarray(self.inter)
        if np.any(inter < 0):
            raise ValueError("negative RBG count")
        if int(inter.sum()) != rbg_count:
            raise ValueError(
                f"inter allocation sums to {int(inter.sum())}, not {rbg_count}"
            )
        active = set(scenario.active_indexes)
        for slot, count in enumerate(inter, start=1):
            if slot not in active and count != 0:
                raise ValueError(f"inactive slice {slot} has RBGs")
        if set(self.intra) != active:
            raise ValueError("intra allocation does not match active slices")
        for sl in scenario.slices:
            counts = np.asarray(self.intra[sl.index])
            if len(counts) != sl.ue_count:
                raise ValueError(f"slice {sl.index}: wrong UE count")
            if np.any(counts < 0) or int(counts.sum()) != inter[sl.index - 1]:
                raise ValueError(
                    f"slice {sl.index}: intra allocation does not match "
                    "its grant"
                )


@dataclass
class SimParams:
    bandwidth: float = settings.bandwidth
    rb_count: int = settings.rb_count
    rbg_count: int = settings.rbg_count
    slots: int = settings.slots
    tti: float = settings.tti
    loss_window: int = settings.loss_window
    throughput_ema: float = settings.throughput_ema
    throughput_floor: float = settings.throughput_floor
    zeta: float = intent_settings.zeta

    def __post_init__(self):
        if self.rb_count % self.rbg_count:
            raise ValueError("rb_count must be a multiple of rbg_count")

    @property
    def rb_per_rbg(self) -> int:
        return self.rb_count // self.rbg_count

    @property
    def rb_bandwidth(self) -> float:
        """Bandwidth of one RB in Hz."""
        return self.bandwidth * 1e6 / self.rb_count


class ThroughputTracker:
    """Exponential moving average of effective throughputs."""

    def __init__(
        self,
        size: int,
        coefficient: float = settings.throughput_ema,
        initial: float = settings.throughput_floor,
    ):
        self.coefficient = coefficient
        self.values = np.full(size, initial, dtype=float)

    def update(self, sample: np.ndarray) -> np.ndarray:
        c = self.coefficient
        self.values = (1 - c) * self.values + c * np.asarray(sample, float)
        return self.values


@dataclass
class NetworkView:
    """
    Read-only state a controller sees before deciding a step.

    Buffer figures are those at the end of the previous step, SE values
    those of the current step and drifts/metrics those of the previous
    step (drifts are 1 before the first step).
    """

    scenario: NetworkScenario
    params: SimParams
    step: int
    se: np.ndarray
    ue_mean_se: np.ndarray
    ue_buffer_occ: np.ndarray
    ue_buffer_bits: np.ndarray
    ue_capacity: np.ndarray
    ue_avg_thr: np.ndarray
    slice_avg_thr: dict
    slice_drifts: dict
    last_metrics: Union[None, StepMetrics] = None

    @property
    def active_mask(self) -> np.ndarray:
        mask = np.zeros(self.params.slots, dtype=bool)
        for i in self.scenario.active_indexes:
            mask[i - 1] = True
        return mask

    def ue_range(self, index: int) -> range:
        return self.scenario.ue_ranges()[index]

    def slice_occupancy(self, index: int) -> float:
        r = self.ue_range(index)
        return float(np.mean(self.ue_buffer_occ[r.start : r.stop]))

    def slice_mean_se(self, index: int) -> float:
        r = self.ue_range(index)
        return float(np.mean(self.ue_mean_se[r.start : r.stop]))


@dataclass
class StepOutcome:
    step: int
    allocation: Allocation
    metrics: StepMetrics
    drifts: dict
    ue_drifts: list
    fulfilled: dict
    done: bool
    view: NetworkView


class NetworkSimulator:
    """
    Per-TTI simulation of the downlink of one cell shared by the slices of
    a scenario.

    Each step transmits with the given allocation over the step's SE
    values, ages and refills the UE buffers with Poisson traffic and
    computes UE and slice metrics, drifts and fulfillment.

    Parameters
    ----------
    scenario : NetworkScenario
        Active slices and UEs.
    grid : SEGrid
        Spectral efficiency replayed by every episode.
    params : Union[None, SimParams]
        Network parameters.
    traffic_seed : int
        Seed of the traffic generator used by `reset()`.
    steps : Union[None, int]
        Episode length; defaults to the grid length.
    record : bool
        Whether to keep the per-step metrics log.
    """

    def __init__(
        self,
        scenario: NetworkScenario,
        grid: SEGrid,
        params: Union[None, SimParams] = None,
        traffic_seed: int = 0,
        steps: Union[None, int] = None,
        record: bool = False,
    ):
        self.scenario = scenario
        self.grid = grid
        self.params = params or SimParams()
        self.traffic_seed = traffic_seed
        self.steps = grid.step_count if steps is None else steps
        self.record = record

        if grid.ue_count != scenario.ue_total:
            raise ValueError(
                f"grid has {grid.ue_count} UEs, scenario {scenario.ue_total}"
            )
        if grid.rb_count != self.params.rb_count:
            raise ValueError(f"grid has {grid.rb_count} RBs")
        if not 1 <= self.steps <= grid.step_count:
            raise ValueError(f"grid has only {grid.step_count} steps")

        self._specs = scenario.ue_specs()
        self._ranges = scenario.ue_ranges()
        self.reset()

    def reset(self, traffic_seed: Union[None, int] = None) -> NetworkView:
        """Start a new episode and return the view of its first step."""
        if traffic_seed is not None:
            self.traffic_seed = traffic_seed
        self.rng = np.random.default_rng(self.traffic_seed)
        self.buffers = [
            UEBufferState(
                capacity=s.buffer_capacity,
                packet_size=s.packet_size,
                max_latency=s.max_buffer_latency,
            )
            for s in self._specs
        ]
        self.ue_thr = ThroughputTracker(
            len(self._specs),
            self.params.throughput_ema,
            self.params.throughput_floor,
        )
        self.slice_thr = ThroughputTracker(
            len(self.scenario.slices),
            self.params.throughput_ema,
            self.params.throughput_floor,
        )
        self.drifts = {
            s.index: IntentDrift.initial(s.spec) for s in self.scenario.slices
        }
        self.last_metrics = None
        self.rows = []
        self._step = 0
        return self.view()

    @property
    def step_index(self) -> int:
        return self._step

    def view(self) -> NetworkView:
        se = self.grid.values[min(self._step, self.grid.step_count - 1)]
        return NetworkView(
            scenario=self.scenario,
            params=self.params,
            step=self._step,
            se=se,
            ue_mean_se=se.mean(axis=1, dtype=float),
            ue_buffer_occ=np.array(
                [b.occupancy_fraction for b in self.buffers]
            ),
            ue_buffer_bits=np.array([b.bits for b in self.buffers], float),
            ue_capacity=np.array([b.capacity for b in self.buffers], float),
            ue_avg_thr=self.ue_thr.values.copy(),
            slice_avg_thr={
                s.index: float(self.slice_thr.values[k])
                for k, s in enumerate(self.scenario.slices)
            },
            slice_drifts=dict(self.drifts),
            last_metrics=self.last_metrics,
        )

    def step(self, allocation: Allocation) -> StepOutcome:
        """
        Simulate one TTI under `allocation`.

        RBGs are laid out contiguously, slices in index order and UEs in
        order inside each slice.
        """
        if self._step >= self.steps:
            raise RuntimeError("episode finished, call reset()")
        p = self.params
        allocation.validate(self.scenario, p.rbg_count)

        se = self.grid.values[self._step]
        cursor = 0
        ue_metrics = [None] * len(self._specs)
        ue_drifts = [None] * len(self._specs)
        for sl in self.scenario.slices:
            counts = np.asarray(allocation.intra[sl.index])
            for j, u in enumerate(self._ranges[sl.index]):
                k = int(counts[j])
                rbs = slice(cursor * p.rb_per_rbg, (cursor + k) * p.rb_per_rbg)
                cursor += k

                buf = self.buffers[u]
                spec = sl.spec
                occupancy_bits = buf.bits
                packets = served_packets(
                    se[u, rbs],
                    p.bandwidth,
                    p.rb_count,
                    spec.packet_size,
                    p.tti,
                )
                served = packets * spec.packet_size / (p.tti * 1e6)
                effective = effective_throughput(served, occupancy_bits, p.tti)

                arrivals = draw_arrivals(self.rng, spec, p.tti)
                buf.step(arrivals, packets)

                metrics = UEMetrics(
                    served=served,
                    effective=effective,
                    buffer_occ=buf.occupancy_fraction,
                    latency=avg_buffer_latency(buf.age_histogram),
                    loss=buf.loss_rate(p.loss_window),
                    arrivals=arrivals * spec.packet_size / (p.tti * 1e6),
                    mean_se=float(np.mean(se[u], dtype=float)),
                    backlog=buf.backlog / buf.capacity,
                )
                ue_metrics[u] = metrics
                ue_drifts[u] = ue_drift(metrics, spec, p.zeta)

        slices = {}
        drifts = {}
        fulfilled = {}
        for sl in self.scenario.slices:
            r = self._ranges[sl.index]
            slices[sl.index] = slice_aggregate(ue_metrics[r.start : r.stop])
            drifts[sl.index] = slice_drift(ue_drifts[r.start : r.stop])
            fulfilled[sl.index] = check_fulfillment(
                slices[sl.index], sl.spec
            )[0]

        self.ue_thr.update([m.effective for m in ue_metrics])
        self.slice_thr.update(
            [slices[s.index].effective for s in self.scenario.slices]
        )

        metrics = StepMetrics(step=self._step, ue=ue_metrics, slices=slices)
        if self.record:
            self._log(metrics)

        n = self._step
        self._step += 1
        self.drifts = drifts
        self.last_metrics = metrics
        return StepOutcome(
            step=n,
            allocation=allocation,
            metrics=metrics,
            drifts=drifts,
            ue_drifts=ue_drifts,
            fulfilled=fulfilled,
            done=self._step >= self.steps,
            view=self.view(),
        )

    def _log(self, metrics: StepMetrics) -> None:
        for sl in self.scenario.slices:
            for u in self._ranges[sl.index]:
                m = metrics.ue[u]
                self.rows.append(
                    (
                        metrics.step,
                        sl.index,
                        u,
                        m.served,
                        m.effective,
                        m.buffer_occ,
                        m.latency,
                        m.loss,
                        m.arrivals,
                    )
                )

    def metrics_frame(self) -> pd.DataFrame:
        """Per-step metrics log, one row per UE and step."""
        return pd.DataFrame(self.rows, columns=settings.metrics_columns)
