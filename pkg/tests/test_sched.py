import numpy as np
import pytest

import intent_rrs.sched.sched as sched
from intent_rrs.intent.intent import IntentDrift
from intent_rrs.simnet.simnet import NetworkSimulator, SliceMetrics


def test_action_factors_mask_inactive():
    """Test inactive slots are forced to -1"""
    factors = sched.ActionFactors([0.5, 0.2, 0.1], [True, False, True])

    assert list(factors.values) == [0.5, -1.0, 0.1]
    with pytest.raises(ValueError):
        sched.ActionFactors([1.5, 0.0, 0.0], [True, True, True])


def test_chi_allocate_examples():
    """Test the factor to RBG mapping on hand-computed cases"""
    mask = np.array([True, True, True, False, False])

    assert list(sched.chi_allocate([0, 0, 0, -1, -1], mask)) == [
        9,
        9,
        9,
        0,
        0,
    ]
    assert list(sched.chi_allocate([1, -1, 0], None, 27)) == [18, 0, 9]
    assert list(sched.chi_allocate([-1, -1, -1, -1, -1], mask)) == [
        9,
        9,
        9,
        0,
        0,
    ]


def test_chi_allocate_fix_up_order():
    """Test excess RBGs are removed from the largest counts first"""
    # 2.67 each rounds to 3 and the lowest slot gives one back
    assert list(sched.chi_allocate([0, 0, 0], None, 8)) == [2, 3, 3]
    assert list(sched.chi_allocate([0, 0, 0, 0], None, 10)) == [2, 2, 3, 3]
    # 2.33 each rounds to 2 and the lowest slot takes the extra one
    assert list(sched.chi_allocate([0, 0, 0], None, 7)) == [3, 2, 2]
    assert list(sched.chi_allocate([-0.5, -0.5, 0.0], None, 8)) == [2, 2, 4]


def test_chi_allocate_invariants():
    """Test random factors give complete allocations with idle inactive
    slots"""
    rng = np.random.default_rng(0)
    for _ in range(10000):
        mask = rng.random(5) < 0.7
        factors = rng.uniform(-1, 1, 5)
        counts = sched.chi_allocate(factors, mask)

        assert counts.min() >= 0
        if mask.any():
            assert counts.sum() == 27
        assert np.all(counts[~mask] == 0)


def test_chi_allocate_scale_consistent():
    """Test factor vectors with equal shares give equal allocations"""
    a = np.array([0.0, -0.5, 0.5])
    b = (a + 1) * 0.5 - 1

    assert list(sched.chi_allocate(a)) == list(sched.chi_allocate(b))


def test_inter_marr():
    """Test the equal split over four and five slices"""
    four = sched.inter_marr(np.array([True, True, True, True, False]))
    five = sched.inter_marr(np.ones(5, dtype=bool))

    assert four.sum() == 27 and set(four[:4]) == {6, 7}
    assert five.sum() == 27 and set(five) == {5, 6}
    assert list(sched.inter_marr(np.array([1, 0, 1, 0, 1], bool))) == [
        9,
        0,
        9,
        0,
        9,
    ]


def test_inter_marr_rotates_remainder():
    """Test the remainder moves to other slices as steps advance"""
    mask = np.array([True, True, True, True, False])
    shares = sum(sched.inter_marr(mask, step=s) for s in range(4))

    assert list(shares[:4]) == [27, 27, 27, 27]


def test_inter_mapf():
    """Test proportional fair factors follow the buffered data"""
    mask = np.array([True, True, False, False, False])
    occ = np.array([0.4, 0.2, 0, 0, 0])
    cap = np.array([100, 100, 0, 0, 0])
    avg = np.array([10.0, 10.0, 0, 0, 0])

    raw = sched.pf_factors(occ, cap, avg)
    assert raw[0] == pytest.approx(2 * raw[1])

    equal = sched.inter_mapf(np.array([0.3, 0.3, 0, 0, 0]), cap, avg, mask)
    assert list(sched.chi_allocate(equal)[:2]) == [13, 14]

    empty = sched.inter_mapf(np.zeros(5), cap, avg, mask)
    assert list(sched.chi_allocate(empty)) == [14, 13, 0, 0, 0]


def test_intra_rr():
    """Test round robin splits and rotates the remainder"""
    assert list(sched.intra_rr(9, 3)) == [3, 3, 3]
    assert list(sched.intra_rr(10, 3, step=0)) == [4, 3, 3]
    assert list(sched.intra_rr(10, 3, step=1)) == [3, 4, 3]
    assert list(sched.intra_rr(0, 3)) == [0, 0, 0]
    with pytest.raises(ValueError):
        sched.intra_rr(3, 0)


def test_intra_mt():
    """Test maximum throughput favours the best UE up to its demand"""
    assert list(sched.intra_mt(5, [3.0])) == [5]
    assert list(sched.intra_mt(5, [4.0, 2.0], [1e9, 1e9])) == [5, 0]

    per_rbg = 100e6 / 27 * 4.0 * 1e-3
    counts = sched.intra_mt(5, [4.0, 2.0], [1.5 * per_rbg, 1e9])
    assert list(counts) == [2, 3]


def test_intra_mt_skips_empty_buffers():
    """Test UEs with empty buffers get nothing while others are
    backlogged"""
    counts = sched.intra_mt(6, [5.0, 4.0, 1.0], [0.0, 0.0, 10.0])

    assert counts[0] == 0 and counts[1] == 0
    assert counts.sum() == 6


def test_intra_pf():
    """Test proportional fair gives nothing to an empty buffer"""
    cap = np.full(3, 100.0)
    avg = np.full(3, 5.0)

    assert list(sched.intra_pf(9, np.full(3, 0.5), cap, avg)) == [3, 3, 3]
    counts = sched.intra_pf(9, np.array([0.0, 0.5, 0.5]), cap, avg)
    assert counts[0] == 0 and counts.sum() == 9

    rng = np.random.default_rng(1)
    for _ in range(1000):
        grant = int(rng.integers(0, 28))
        occ = rng.random(4)
        counts = sched.intra_pf(grant, occ, np.full(4, 10.0), rng.random(4))
        assert counts.sum() == grant


def test_intent_aware_reward():
    """Test the weighted drift reward"""
    hp = {1: False, 2: True}
    fulfilled = {1: IntentDrift(thr=0.5), 2: IntentDrift(lat=1.0)}
    regular_violated = {1: IntentDrift(thr=-1.0), 2: IntentDrift(lat=1.0)}
    hp_violated = {1: IntentDrift(thr=1.0), 2: IntentDrift(lat=-1.0)}

    assert sched.intent_aware_reward(fulfilled, hp) == 0.0
    assert sched.intent_aware_reward(regular_violated, hp) == (
        pytest.approx(-1 / 3)
    )
    assert sched.intent_aware_reward(hp_violated, hp) == pytest.approx(
        2 * sched.intent_aware_reward(regular_violated, hp)
    )


def _slice_metrics(served=0.0, buffer_occ=0.0):
    return SliceMetrics(
        served=served,
        effective=served,
        buffer_occ=buffer_occ,
        latency=0.0,
        loss=0.0,
        arrivals=0.0,
        mean_se=5.0,
        backlog=buffer_occ,
    )


def test_sched_slicing_reward(catalog):
    """Test eMBB throughput and URLLC backlog terms"""
    by_name = {s.name: s for s in catalog}
    embb = {1: by_name["Cloud gaming"], 2: by_name["UAV app case 1"]}

    assert sched.sched_slicing_classes(by_name["VR gaming"]) == (True, True)
    assert sched.sched_slicing_reward(
        embb, {1: _slice_metrics(10.0), 2: _slice_metrics(20.0)}
    ) == pytest.approx(30.0)

    urllc = {1: by_name["VR gaming"]}
    assert sched.sched_slicing_reward(
        {1: by_name["Robotic diagnosis"]}, {1: _slice_metrics()}
    ) == 0.0
    reward = sched.sched_slicing_reward(
        urllc, {1: _slice_metrics(served=5.0, buffer_occ=0.001)}
    )
    assert reward == pytest.approx(5.0 - 0.001 * 1024000 * 65536 / 1e6)


@pytest.mark.parametrize(
    "controller", [sched.MarrController(), sched.MapfController()]
)
def test_baselines_produce_valid_allocations(
    controller, small_scenario, small_grid
):
    """Test baseline allocations are complete on every step"""
    sim = NetworkSimulator(small_scenario, small_grid, traffic_seed=1)
    view = sim.reset()
    controller.reset(view)
    done = False
    while not done:
        allocation = controller.allocate(view)
        allocation.validate(small_scenario)
        outcome = sim.step(allocation)
        assert controller.observe(outcome) == 0.0
        view, done = outcome.view, outcome.done


def test_intra_allocation_mt(small_scenario, flat_grid):
    """Test the MT kernel fills each slice's grant"""
    sim = NetworkSimulator(small_scenario, flat_grid)
    view = sim.reset()
    inter = np.array([9, 0, 9, 0, 9])
    intra = sched.intra_allocation(view, inter, {1: "mt", 3: "rr", 5: "pf"})

    assert {i: int(c.sum()) for i, c in intra.items()} == {1: 9, 3: 9, 5: 9}
    with pytest.raises(ValueError):
        sched.intra_allocation(view, inter, {1: "xx", 3: "rr", 5: "rr"})
