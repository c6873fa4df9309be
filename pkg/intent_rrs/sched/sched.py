import logging
import math
from dataclasses import dataclass
from typing import Mapping, Sequence, Union

import numpy as np

from intent_rrs.intent.intent import IntentDrift
from intent_rrs.intent_rrs import Controller
from intent_rrs.scenario.scenario import SliceSpec
from intent_rrs.simnet.simnet import (
    Allocation,
    NetworkView,
    SliceMetrics,
    StepOutcome,
)

from . import settings

logger = logging.getLogger(__name__)


@dataclass
class ActionFactors:
    """
    Per-slot action factors in [-1, 1]; inactive slots are forced to -1.
    """

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.values.shape != self.mask.shape:
            raise ValueError("factors and mask differ in length")
        if np.any(np.abs(self.values) > 1):
            raise ValueError("action factors must be in [-1, 1]")
        self.values = np.where(self.mask, self.values, -1.0)


def _descending(counts: np.ndarray) -> list[int]:
    return sorted(range(len(counts)), key=lambda i: (-counts[i], i))


def _fix_total(
    counts: np.ndarray, total: int, eligible: np.ndarray
) -> np.ndarray:
    # one RBG per slot per pass, largest counts first
    while counts.sum() > total:
        for i in _descending(counts):
            if counts.sum() == total:
                break
            if counts[i] > 0:
                counts[i] -= 1
    while counts.sum() < total:
        for i in _descending(counts):
            if counts.sum() == total:
                break
            if eligible[i]:
                counts[i] += 1
    return counts


def equal_split(mask: np.ndarray, total: int, offset: int = 0) -> np.ndarray:
    """
    Split `total` units as evenly as possible over the True slots of
    `mask`; the remainder goes to consecutive active slots starting at
    active position ``offset % active_count``.
    """
    mask = np.asarray(mask, dtype=bool)
    counts = np.zeros(len(mask), dtype=np.int64)
    active = np.flatnonzero(mask)
    if len(active) == 0 or total <= 0:
        return counts
    base, rem = divmod(int(total), len(active))
    counts[active] = base
    for j in range(rem):
        counts[active[(offset + j) % len(active)]] += 1
    return counts


def chi_allocate(
    factors: Union[ActionFactors, np.ndarray],
    active_mask: Union[None, np.ndarray] = None,
    rbg_count: int = settings.rbg_count,
) -> np.ndarray:
    """
    Map action factors to integer RBG counts.

    Shares are proportional to ``a + 1``, rounded half up; the total is
    then fixed to `rbg_count` by removing (or adding) one RBG per slot in
    descending-count order, ties to the lowest slot. When every factor is
    -1 the RBGs are split equally over the active slots.

    Parameters
    ----------
    factors : Union[ActionFactors, np.ndarray]
        Action factors, clipped to [-1, 1].
    active_mask : Union[None, np.ndarray]
        Active slots; all slots by default, or the mask of `factors`.
    rbg_count : int
        RBGs to distribute.

    Returns
    -------
    np.ndarray
        Non-negative integer counts summing to `rbg_count`, zero on
        inactive slots.
    """
    if isinstance(factors, ActionFactors):
        if active_mask is None:
            active_mask = factors.mask
        factors = factors.values
    a = np.clip(np.asarray(factors, dtype=float), -1.0, 1.0)
    if active_mask is None:
        active_mask = np.ones(len(a), dtype=bool)
    mask = np.asarray(active_mask, dtype=bool)
    a = np.where(mask, a, -1.0)

    counts = np.zeros(len(a), dtype=np.int64)
    if rbg_count <= 0 or not mask.any():
        return counts

    weights = a + 1
    total = weights.sum()
    if total <= 0:
        return equal_split(mask, rbg_count)
    raw = weights * rbg_count / total
    counts = np.floor(raw + 0.5).astype(np.int64)
    return _fix_total(counts, rbg_count, weights > 0)


def inter_marr(
    active_mask: np.ndarray,
    rbg_count: int = settings.rbg_count,
    step: int = 0,
) -> np.ndarray:
    """Equal split of the RBGs over the active slices; the remainder
    rotates with the step."""
    return equal_split(active_mask, rbg_count, offset=step)


def pf_factors(
    occupancy: np.ndarray,
    capacity: np.ndarray,
    avg_throughput: np.ndarray,
    floor: float = settings.pf_floor,
) -> np.ndarray:
    """Proportional fair factors, buffered packets over the average
    effective throughput."""
    occupancy = np.asarray(occupancy, dtype=float)
    capacity = np.asarray(capacity, dtype=float)
    avg = np.maximum(np.asarray(avg_throughput, dtype=float), floor)
    return occupancy * capacity / avg


def factors_to_actions(
    factors: np.ndarray, mask: Union[None, np.ndarray] = None
) -> np.ndarray:
    """
    Rescale non-negative factors into action factors: shares
    ``s = f / sum(f)`` map to ``2 s - 1``. All-zero factors map to -1.
    """
    f = np.asarray(factors, dtype=float)
    mask = np.ones(len(f), dtype=bool) if mask is None else np.asarray(mask)
    f = np.where(mask, f, 0.0)
    total = f.sum()
    if total <= 0:
        return np.full(len(f), -1.0)
    a = 2 * f / total - 1
    return np.where(mask, np.clip(a, -1.0, 1.0), -1.0)


def inter_mapf(
    occupancy: np.ndarray,
    capacity: np.ndarray,
    avg_throughput: np.ndarray,
    active_mask: np.ndarray,
    floor: float = settings.pf_floor,
) -> ActionFactors:
    """
    Proportional fair inter-slice action factors.

    Parameters
    ----------
    occupancy : np.ndarray
        Mean buffer occupancy fraction of each slot's UEs.
    capacity : np.ndarray
        Buffer capacity in packets of each slot's slice type.
    avg_throughput : np.ndarray
        Average effective throughput of each slot in Mbps.
    active_mask : np.ndarray
        Active slots.
    """
    mask = np.asarray(active_mask, dtype=bool)
    f = np.where(
        mask, pf_factors(occupancy, capacity, avg_throughput, floor), 0
    )
    return ActionFactors(factors_to_actions(f, mask), mask)


def intra_rr(rbgs: int, ue_count: int, step: int = 0) -> np.ndarray:
    """Round robin: equal split, remainder starting at UE ``step %
    ue_count``."""
    if ue_count < 1:
        raise ValueError("slice has no UEs")
    return equal_split(np.ones(ue_count, dtype=bool), rbgs, offset=step)


def intra_mt(
    rbgs: int,
    ue_se_means: np.ndarray,
    buffer_bits: Union[None, np.ndarray] = None,
    rbg_bandwidth: float = 100e6 / 27,
    tti: float = 1e-3,
) -> np.ndarray:
    """
    Maximum throughput: RBGs go greedily to the UEs with the highest mean
    SE, each capped at the RBGs its buffer needs.

    Parameters
    ----------
    rbgs : int
        RBGs granted to the slice.
    ue_se_means : np.ndarray
        Mean SE of each UE over the slice's RBGs, in bits/s/Hz.
    buffer_bits : Union[None, np.ndarray]
        Buffered bits per UE; no caps if None.
    rbg_bandwidth : float
        Bandwidth of one RBG in Hz.
    tti : float
        TTI in seconds.

    Returns
    -------
    np.ndarray
        RBG count per UE, summing to `rbgs`.
    """
    se = np.asarray(ue_se_means, dtype=float)
    counts = np.zeros(len(se), dtype=np.int64)
    if rbgs <= 0:
        return counts
    order = np.argsort(-se, kind="stable")

    if buffer_bits is None:
        buffered = np.ones(len(se), dtype=bool)
        caps = np.full(len(se), np.inf)
    else:
        bits = np.asarray(buffer_bits, dtype=float)
        buffered = bits > 0
        per_rbg = rbg_bandwidth * se * tti
        caps = np.full(len(se), np.inf)
        for u in range(len(se)):
            if not buffered[u]:
                caps[u] = 0
            elif per_rbg[u] > 0:
                caps[u] = math.ceil(bits[u] / per_rbg[u])

    left = int(rbgs)
    for u in order:
        give = int(min(left, caps[u]))
        counts[u] += give
        left -= give
    if left:
        backlogged = [u for u in order if buffered[u]]
        counts[backlogged[0] if backlogged else order[0]] += left
    return counts


def intra_pf(
    rbgs: int,
    occupancy: np.ndarray,
    capacity: np.ndarray,
    avg_throughput: np.ndarray,
    floor: float = settings.pf_floor,
) -> np.ndarray:
    """Proportional fair: per-UE factors split through `chi_allocate` on
    the UE axis."""
    f = pf_factors(occupancy, capacity, avg_throughput, floor)
    return chi_allocate(factors_to_actions(f), None, rbgs)


def slice_offsets(inter: np.ndarray) -> dict[int, int]:
    """First RBG of each slot under the contiguous layout."""
    starts = np.concatenate([[0], np.cumsum(inter)[:-1]])
    return {slot: int(starts[slot - 1]) for slot in range(1, len(inter) + 1)}


def intra_allocation(
    view: NetworkView, inter: np.ndarray, kernels: Mapping[int, str]
) -> dict[int, np.ndarray]:
    """
    Run the chosen intra-slice kernel of every active slice.

    Parameters
    ----------
    view : NetworkView
        Network state of the step.
    inter : np.ndarray
        RBG grant per slot.
    kernels : Mapping[int, str]
        Kernel name (``rr``, ``pf`` or ``mt``) per slice index.
    """
    p = view.params
    offsets = slice_offsets(inter)
    intra = {}
    for sl in view.scenario.slices:
        grant = int(inter[sl.index - 1])
        r = view.ue_range(sl.index)
        kernel = kernels[sl.index]
        if kernel == "rr":
            counts = intra_rr(grant, sl.ue_count, view.step)
        elif kernel == "pf":
            counts = intra_pf(
                grant,
                view.ue_buffer_occ[r.start : r.stop],
                view.ue_capacity[r.start : r.stop],
                view.ue_avg_thr[r.start : r.stop],
            )
        elif kernel == "mt":
            first = offsets[sl.index] * p.rb_per_rbg
            rbs = slice(first, first + grant * p.rb_per_rbg)
            se = (
                view.se[r.start : r.stop, rbs].mean(axis=1, dtype=float)
                if grant
                else np.zeros(sl.ue_count)
            )
            counts = intra_mt(
                grant,
                se,
                view.ue_buffer_bits[r.start : r.stop],
                p.rb_bandwidth * p.rb_per_rbg,
                p.tti,
            )
        else:
            raise ValueError(f"unknown intra-slice kernel '{kernel}'")
        intra[sl.index] = counts
    return intra


def intent_aware_reward(
    drifts: Mapping[int, IntentDrift],
    high_priority: Mapping[int, bool],
    hp_weight: float = settings.hp_weight,
    regular_weight: float = settings.regular_weight,
) -> float:
    """
    Weighted sum of the negative drifts of every active intent, normalized
    by the weight total; high-priority slices weigh `hp_weight`.
    """
    if not drifts:
        return 0.0
    num = 0.0
    den = 0.0
    for index, drift in drifts.items():
        w = hp_weight if high_priority[index] else regular_weight
        num += w * sum(min(d, 0.0) for d in drift.values())
        den += w
    return num / den


def sched_slicing_classes(spec: SliceSpec) -> tuple[bool, bool]:
    """``(embb, urllc)`` membership of a slice type; both may hold."""
    embb = spec.thr_req is not None and spec.thr_req > settings.embb_throughput
    urllc = spec.lat_req is not None and spec.lat_req < settings.urllc_latency
    return embb, urllc


def sched_slicing_reward(
    specs: Mapping[int, SliceSpec], metrics: Mapping[int, SliceMetrics]
) -> float:
    """
    Served throughput of the eMBB slices, in Mbps, minus the data buffered
    by the URLLC slices, in Mbit.
    """
    reward = 0.0
    for index, spec in specs.items():
        embb, urllc = sched_slicing_classes(spec)
        m = metrics[index]
        if embb:
            reward += m.served
        if urllc:
            reward -= (
                m.buffer_occ * spec.buffer_capacity * spec.packet_size / 1e6
            )
    return reward


def slot_array(view: NetworkView, values: Mapping[int, float]) -> np.ndarray:
    out = np.zeros(view.params.slots)
    for index, value in values.items():
        out[index - 1] = value
    return out


class MarrController(Controller):
    """Round robin between slices and between the UEs of each slice."""

    name = "marr"

    def reset(self, view: NetworkView) -> None:
        pass

    def allocate(self, view: NetworkView) -> Allocation:
        inter = inter_marr(view.active_mask, view.params.rbg_count, view.step)
        kernels = {i: "rr" for i in view.scenario.active_indexes}
        return Allocation(inter, intra_allocation(view, inter, kernels))

    def observe(self, outcome: StepOutcome) -> float:
        return 0.0


class MapfController(Controller):
    """Proportional fair between slices and between the UEs of each slice."""

    name = "mapf"

    def reset(self, view: NetworkView) -> None:
        pass

    def allocate(self, view: NetworkView) -> Allocation:
        scenario = view.scenario
        occupancy = slot_array(
            view, {i: view.slice_occupancy(i) for i in scenario.active_indexes}
        )
        capacity = slot_array(
            view,
            {s.index: s.spec.buffer_capacity for s in scenario.slices},
        )
        avg = slot_array(view, view.slice_avg_thr)
        factors = inter_mapf(occupancy, capacity, avg, view.active_mask)
        inter = chi_allocate(factors, rbg_count=view.params.rbg_count)
        kernels = {i: "pf" for i in scenario.active_indexes}
        return Allocation(inter, intra_allocation(view, inter, kernels))

    def observe(self, outcome: StepOutcome) -> float:
        return 0.0
