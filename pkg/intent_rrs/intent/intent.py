from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Sequence, Union

import numpy as np

from . import settings

if TYPE_CHECKING:
    from intent_rrs.scenario.scenario import SliceSpec
    from intent_rrs.simnet.simnet import SliceMetrics, UEMetrics


def _clamp(value: float) -> float:
    return float(min(max(value, settings.drift_min), settings.drift_max))


def drift_throughput(
    e: float,
    req: float,
    zeta: float = settings.zeta,
    buffer_occ: float = 1.0,
) -> float:
    """
    Intent drift of the effective throughput.

    Parameters
    ----------
    e : float
        Effective throughput in Mbps.
    req : float
        Throughput requirement in Mbps, > 0.
    zeta : float
        Over-fulfillment rate in (0, 1].
    buffer_occ : float
        Buffer occupancy left after transmission; an empty buffer means
        the UE had nothing more to send and the drift is 1.

    Returns
    -------
    float
        Drift in [-1, 1].
    """
    if req <= 0:
        raise ValueError("throughput requirement must be > 0")
    if not 0 < zeta <= 1:
        raise ValueError("zeta must be in (0, 1]")
    if buffer_occ <= 0:
        return 1.0
    if e < req:
        return _clamp((e - req) / req)
    if e < req * (1 + zeta):
        return _clamp((e - req) / (req * zeta))
    return 1.0


def drift_latency(
    lat: float, req: float, l_max: float, zeta: float = settings.zeta
) -> float:
    """
    Intent drift of the average buffer latency.

    Parameters
    ----------
    lat : float
        Average buffer latency in ms.
    req : float
        Latency requirement in ms, 0 < req < l_max.
    l_max : float
        Maximum buffer latency in ms.
    zeta : float
        Over-fulfillment rate in (0, 1].

    Returns
    -------
    float
        Drift in [-1, 1].
    """
    if not 0 < req < l_max:
        raise ValueError("latency requirement must be in (0, l_max)")
    if lat > req:
        return _clamp((req - lat) / (l_max - req))
    if lat > req * (1 - zeta):
        return _clamp((req - lat) / (req * zeta))
    return 1.0


def drift_packet_loss(
    p: float, req: float, zeta: float = settings.zeta
) -> float:
    """
    Intent drift of the packet loss rate.

    Parameters
    ----------
    p : float
        Packet loss rate in [0, 1].
    req : float
        Loss requirement, 0 < req < 1.
    zeta : float
        Over-fulfillment rate in (0, 1].

    Returns
    -------
    float
        Drift in [-1, 1].
    """
    if not 0 < req < 1:
        raise ValueError("loss requirement must be in (0, 1)")
    if p > req:
        return _clamp((req - p) / (1 - req))
    if p > req * (1 - zeta):
        return _clamp((req - p) / (req * zeta))
    return 1.0


@dataclass(frozen=True)
class IntentDrift:
    """
    Throughput, latency and loss drifts of a UE or a slice; None where the
    slice type has no such intent.
    """

    thr: Union[None, float] = None
    lat: Union[None, float] = None
    loss: Union[None, float] = None

    def __post_init__(self):
        for value in self.values():
            if not settings.drift_min <= value <= settings.drift_max:
                raise ValueError(f"drift {value} outside [-1, 1]")

    def values(self) -> list[float]:
        """Drifts of the active intents."""
        return [d for d in (self.thr, self.lat, self.loss) if d is not None]

    def minimum(self) -> float:
        return min(self.values())

    @property
    def violated(self) -> bool:
        return any(d < 0 for d in self.values())

    @property
    def fulfilled(self) -> bool:
        return not self.violated

    @classmethod
    def initial(cls, spec: "SliceSpec") -> "IntentDrift":
        """Drift of a slice before its first step: every active intent 1."""
        m_thr, m_lat, m_loss = spec.active_intents
        return cls(
            thr=1.0 if m_thr else None,
            lat=1.0 if m_lat else None,
            loss=1.0 if m_loss else None,
        )


def ue_drift(
    metrics: "UEMetrics", spec: "SliceSpec", zeta: float = settings.zeta
) -> IntentDrift:
    """Drift of one UE against the intents of its slice type."""
    return IntentDrift(
        thr=(
            None
            if spec.thr_req is None
            else drift_throughput(
                metrics.effective, spec.thr_req, zeta, metrics.backlog
            )
        ),
        lat=(
            None
            if spec.lat_req is None
            else drift_latency(
                metrics.latency, spec.lat_req, spec.max_buffer_latency, zeta
            )
        ),
        loss=(
            None
            if spec.loss_req is None
            else drift_packet_loss(metrics.loss, spec.loss_req, zeta)
        ),
    )


def slice_drift(ue_drifts: Sequence[IntentDrift]) -> IntentDrift:
    """
    Slice drift as the mean of its UEs' drifts, metric by metric.
    """
    if not ue_drifts:
        raise ValueError("slice has no UEs")

    def mean(name: str) -> Union[None, float]:
        values = [getattr(d, name) for d in ue_drifts]
        if values[0] is None:
            return None
        return float(np.mean(values))

    return IntentDrift(thr=mean("thr"), lat=mean("lat"), loss=mean("loss"))


def check_fulfillment(
    slice_metrics: "SliceMetrics", spec: "SliceSpec"
) -> tuple[bool, bool]:
    """
    Check the active intents of a slice on its mean metrics.

    The throughput intent also holds when every UE either emptied its
    buffer or sent at least the requirement, the UE-level condition under
    which its throughput drift is not negative.

    Parameters
    ----------
    slice_metrics : SliceMetrics
        Slice-mean metrics of the step.
    spec : SliceSpec
        Slice type carrying the intents.

    Returns
    -------
    tuple[bool, bool]
        ``(fulfilled, violated)``, with violated = not fulfilled.
    """
    fulfilled = True
    if spec.thr_req is not None:
        fulfilled &= (
            slice_metrics.effective >= spec.thr_req
            or slice_metrics.backlogged_effective >= spec.thr_req
        )
    if spec.lat_req is not None:
        fulfilled &= slice_metrics.latency <= spec.lat_req
    if spec.loss_req is not None:
        fulfilled &= slice_metrics.loss <= spec.loss_req
    return bool(fulfilled), not fulfilled


def cv(drifts: Iterable[IntentDrift]) -> float:
    """
    Sum over slices of the worst active drift, clipped at 0.

    Returns 0 when every slice of the group meets its intents and a
    negative value otherwise.
    """
    return float(sum(min(d.minimum(), 0.0) for d in drifts))
