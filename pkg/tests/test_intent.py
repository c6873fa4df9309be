import numpy as np
import pytest

import intent_rrs.intent.intent as intent
from intent_rrs.simnet.simnet import SliceMetrics, UEMetrics


def _metrics(**kwargs):
    values = dict(
        served=0.0,
        effective=0.0,
        buffer_occ=0.5,
        latency=0.0,
        loss=0.0,
        arrivals=0.0,
        mean_se=5.0,
        backlog=0.5,
    )
    values.update(kwargs)
    return values


def test_drift_throughput_branches():
    """Test the throughput drift on each branch"""
    assert intent.drift_throughput(10, 20) == pytest.approx(-0.5)
    assert intent.drift_throughput(21, 20) == pytest.approx(0.5)
    assert intent.drift_throughput(30, 20) == 1.0
    assert intent.drift_throughput(20, 20) == 0.0


def test_drift_throughput_empty_buffer():
    """Test an empty buffer fulfills the throughput intent"""
    assert intent.drift_throughput(0, 20, buffer_occ=0.0) == 1.0


def test_drift_latency_branches():
    """Test the latency drift on each branch"""
    assert intent.drift_latency(30, 20, 40) == pytest.approx(-0.5)
    assert intent.drift_latency(19, 20, 40) == pytest.approx(0.5)
    assert intent.drift_latency(5, 20, 40) == 1.0
    assert intent.drift_latency(40, 20, 40) == -1.0


def test_drift_packet_loss_branches():
    """Test the loss drift on each branch"""
    assert intent.drift_packet_loss(0.0, 1e-5) == 1.0
    assert intent.drift_packet_loss(0.95e-5, 1e-5) == pytest.approx(0.5)
    assert intent.drift_packet_loss(1.0, 1e-5) == -1.0
    assert -1 < intent.drift_packet_loss(0.5, 1e-5) < 0


def test_drifts_are_monotone_and_clamped():
    """Test drifts move with the metric and stay within [-1, 1]"""
    thr = [intent.drift_throughput(e, 20) for e in np.linspace(0, 60, 601)]
    lat = [intent.drift_latency(x, 20, 40) for x in np.linspace(0, 80, 801)]
    loss = [
        intent.drift_packet_loss(p, 1e-5)
        for p in np.concatenate([np.linspace(0, 2e-5, 201), [0.5, 1.0]])
    ]

    for drifts, sign in ((thr, 1), (lat, -1), (loss, -1)):
        steps = sign * np.diff(drifts)
        assert np.all(steps >= -1e-12)
        assert min(drifts) >= -1.0 and max(drifts) <= 1.0
    assert thr[0] == -1.0 and thr[-1] == 1.0
    assert lat[0] == 1.0 and lat[-1] == -1.0
    assert loss[0] == 1.0 and loss[-1] == -1.0


def test_drift_preconditions():
    """Test invalid requirements raise ValueError"""
    with pytest.raises(ValueError):
        intent.drift_throughput(1, 0)
    with pytest.raises(ValueError):
        intent.drift_latency(1, 50, 40)
    with pytest.raises(ValueError):
        intent.drift_packet_loss(0.1, 1.0)
    with pytest.raises(ValueError):
        intent.drift_throughput(1, 10, zeta=0)


def test_intent_drift_range():
    """Test drift values outside [-1, 1] are rejected"""
    with pytest.raises(ValueError):
        intent.IntentDrift(thr=1.5)


def test_initial_drift(catalog):
    """Test the initial drift sets only the active intents to 1"""
    by_name = {spec.name: spec for spec in catalog}
    drift = intent.IntentDrift.initial(by_name["Control case 2"])

    assert drift == intent.IntentDrift(thr=None, lat=1.0, loss=1.0)
    assert drift.fulfilled


def test_ue_drift_uses_active_intents(catalog):
    """Test UE drifts skip inactive intents"""
    spec = {s.name: s for s in catalog}["Video streaming 4K"]
    drift = intent.ue_drift(UEMetrics(**_metrics(effective=15.0)), spec)

    assert drift.lat is None and drift.loss is None
    assert drift.thr == pytest.approx(-0.5)


def test_slice_drift_mean():
    """Test the slice drift averages UE drifts per metric"""
    drift = intent.slice_drift(
        [
            intent.IntentDrift(thr=1.0, lat=-1.0),
            intent.IntentDrift(thr=0.0, lat=0.0),
        ]
    )

    assert drift == intent.IntentDrift(thr=0.5, lat=-0.5)
    with pytest.raises(ValueError):
        intent.slice_drift([])


def test_check_fulfillment(catalog):
    """Test fulfillment of each intent on slice metrics"""
    spec = {s.name: s for s in catalog}["Robotic diagnosis"]
    ok = SliceMetrics(**_metrics(effective=16.0, latency=10.0))
    slow = SliceMetrics(**_metrics(effective=16.0, latency=25.0))
    lossy = SliceMetrics(**_metrics(effective=16.0, loss=0.01))

    assert intent.check_fulfillment(ok, spec) == (True, False)
    assert intent.check_fulfillment(slow, spec) == (False, True)
    assert intent.check_fulfillment(lossy, spec) == (False, True)


def test_check_fulfillment_drained(catalog):
    """Test a drained slice meets its throughput intent"""
    spec = {s.name: s for s in catalog}["Video streaming 4K"]
    metrics = SliceMetrics(**_metrics(effective=1.0, backlog=0.0))

    assert metrics.drained
    assert intent.check_fulfillment(metrics, spec) == (True, False)


def test_check_fulfillment_backlogged_ues(catalog):
    """Test idle UEs do not count against backlogged UEs sent at rate"""
    spec = {s.name: s for s in catalog}["Cloud gaming"]
    served = SliceMetrics(
        **_metrics(effective=26.2144), backlogged_effective=65.536
    )
    starved = SliceMetrics(
        **_metrics(effective=26.2144), backlogged_effective=0.0
    )

    assert intent.check_fulfillment(served, spec) == (True, False)
    assert intent.check_fulfillment(starved, spec) == (False, True)


def test_cv():
    """Test the violation sum of clipped minimum drifts"""
    fulfilled = [intent.IntentDrift(thr=1.0), intent.IntentDrift(lat=0.2)]
    one_violated = fulfilled + [intent.IntentDrift(thr=-0.4, lat=0.3)]

    assert intent.cv(fulfilled) == 0.0
    assert intent.cv(one_violated) == pytest.approx(-0.4)
