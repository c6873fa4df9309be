import math
import os
import tempfile

import numpy as np
import pytest
import torch

import intent_rrs.agent.agent as agent
import intent_rrs.agent.ppo as ppo
from intent_rrs.intent.intent import IntentDrift
from intent_rrs.intent_rrs import (
    CheckpointFormatError,
    CheckpointShapeError,
    CheckpointVersionError,
    NonFiniteLossError,
)
from intent_rrs.simnet.simnet import NetworkSimulator


@pytest.fixture
def view(small_scenario, flat_grid):
    return NetworkSimulator(small_scenario, flat_grid).reset()


def test_inter_order(view):
    """Test slices are ordered by throughput intent, then index"""
    assert agent.inter_order(view) == [5, 3, 1, 2, 4]


def test_build_inter_obs(view):
    """Test the ordered observation blocks and mask"""
    obs = agent.build_inter_obs(view)

    assert obs.vector.shape == (50,)
    assert list(obs.mask) == [True, True, True, False, False]
    # VR gaming: every intent active and fulfilled, 100 Mbps, 2 UEs
    assert list(obs.vector[:10]) == pytest.approx(
        [1, 1, 1, 1, 1, 1, 0, 1.0, 2 / 25, 5 / 20]
    )
    # Control case 2 has no throughput intent
    assert list(obs.vector[20:26]) == [0, 1, 1, 0, 1, 1]
    assert np.all(obs.vector[30:] == 0)


def test_build_intra_obs(view):
    """Test the intra observation pads UEs to five slots"""
    obs = agent.build_intra_obs(view, 5, 9)

    assert obs.shape == (19,)
    assert obs[6] == pytest.approx(9 / 27)
    assert list(obs[-5:]) == pytest.approx([0.25, 0.25, 0, 0, 0])
    with pytest.raises(ValueError):
        agent.build_intra_obs(view, 2, 0)


def test_build_intent_aware_obs(view):
    """Test raw metrics sit in slot order with empty inactive slots"""
    obs = agent.build_intent_aware_obs(view)

    assert obs.vector.shape == (50,)
    assert obs.vector[40] == 100.0
    assert obs.vector[41] == 10.0
    assert np.all(obs.vector[10:20] == 0)
    assert list(obs.mask) == list(view.active_mask)


def _policy(seed=0, **kwargs):
    torch.manual_seed(seed)
    return ppo.ActorCritic(**kwargs)


def test_sample_inter_action_masks_slots():
    """Test masked slots get -1 and no log-probability"""
    policy = _policy(obs_size=50, action_size=5)
    obs = np.random.default_rng(0).random(50)
    mask = np.array([True, True, False, True, False])
    sample = agent.sample_inter_action(
        policy, obs, mask, np.random.default_rng(1)
    )

    assert sample.action[2] == -1.0 and sample.action[4] == -1.0
    assert np.all(np.abs(sample.action) <= 1)

    # unit standard deviation at initialization
    mean, _ = ppo.mlp_forward(policy, obs)
    expected = sum(
        -0.5 * (sample.raw[k] - mean[k]) ** 2 - 0.5 * math.log(2 * math.pi)
        for k in (0, 1, 3)
    )
    assert sample.log_prob == pytest.approx(expected)


def test_sample_inter_action_deterministic():
    """Test deterministic actions are the clipped means"""
    policy = _policy(obs_size=50, action_size=5)
    obs = np.zeros(50)
    sample = agent.sample_inter_action(
        policy, obs, np.ones(5, bool), np.random.default_rng(0), True
    )
    mean, _ = ppo.mlp_forward(policy, obs)

    assert list(sample.action) == pytest.approx(list(np.clip(mean, -1, 1)))


def test_sample_intra_action_uniform():
    """Test zero logits pick every kernel about a third of the time"""
    policy = _policy(obs_size=19, action_size=3, kind=ppo.CATEGORICAL)
    with torch.no_grad():
        policy.actor.weight.zero_()
        policy.actor.bias.zero_()
    rng = np.random.default_rng(0)
    obs = np.zeros(19)
    draws = [
        agent.sample_intra_action(policy, obs, rng).action
        for _ in range(10000)
    ]
    freq = np.bincount(draws, minlength=3) / len(draws)

    assert np.allclose(freq, 1 / 3, atol=0.03)


def test_sample_intra_action_greedy():
    """Test the greedy kernel choice is the largest logit"""
    policy = _policy(obs_size=19, action_size=3, kind=ppo.CATEGORICAL)
    with torch.no_grad():
        policy.actor.weight.zero_()
        policy.actor.bias.copy_(torch.tensor([0.0, 0.0, 5.0]))
    sample = agent.sample_intra_action(
        policy, np.zeros(19), np.random.default_rng(0), True
    )

    assert sample.action == 2


def test_inter_reward_cases():
    """Test the three branches of the inter-slice reward"""
    hp = {1: False, 2: True}
    fulfilled = {1: IntentDrift(thr=0.5), 2: IntentDrift(lat=0.7)}
    rewards = {i: agent.intra_reward(d) for i, d in fulfilled.items()}
    assert agent.inter_reward(rewards, fulfilled, hp) == pytest.approx(0.6)

    hp_violated = {1: IntentDrift(thr=-0.8), 2: IntentDrift(lat=-0.4)}
    rewards = {i: agent.intra_reward(d) for i, d in hp_violated.items()}
    assert agent.inter_reward(rewards, hp_violated, hp) == pytest.approx(-1.4)

    regular = {1: IntentDrift(thr=-0.8), 2: IntentDrift(lat=0.4)}
    rewards = {i: agent.intra_reward(d) for i, d in regular.items()}
    assert agent.inter_reward(rewards, regular, hp) == pytest.approx(-0.8)


def test_intra_reward_is_worst_drift():
    """Test the intra reward is the minimum active drift"""
    assert agent.intra_reward(IntentDrift(thr=0.3, lat=-0.2)) == -0.2


def test_ordered_state_reduction():
    """Test the ordered representation counts"""
    multisets, tuples, reduction = agent.ordered_state_reduction()

    assert (multisets, tuples) == (2002, 161051)
    assert reduction == pytest.approx(98.757, abs=1e-3)
    assert agent.ordered_state_reduction(
        3, 4, enumerate_states=True
    ) == agent.ordered_state_reduction(3, 4)


def test_gae_hand_computed():
    """Test GAE against a two-step hand computation"""
    adv, ret = ppo.gae([1.0, 1.0], [0.5, 0.5], [0, 1], 0.0, 0.9, 0.8)

    assert list(adv) == pytest.approx([1.31, 0.5])
    assert list(ret) == pytest.approx([1.81, 1.0])


def test_gae_bootstraps_unfinished_trajectory():
    """Test the last value is used when the trajectory is cut"""
    adv, _ = ppo.gae([0.0], [0.0], [0], 2.0, 0.9, 0.8)
    done, _ = ppo.gae([0.0], [0.0], [1], 2.0, 0.9, 0.8)

    assert adv[0] == pytest.approx(1.8)
    assert done[0] == 0.0


def _toy_data(policy, shifts, kind):
    rng = np.random.default_rng(0)
    n = len(shifts)
    obs = torch.as_tensor(rng.normal(size=(n, 1)))
    if kind == ppo.GAUSSIAN:
        actions = torch.as_tensor(rng.normal(size=(n, 1)))
        masks = torch.ones(n, 1, dtype=torch.float64)
    else:
        actions = torch.as_tensor(rng.integers(0, 3, n).astype(float))
        masks = None
    with torch.no_grad():
        log_probs, _, _ = policy.evaluate(obs, actions, masks)
    old = log_probs + torch.as_tensor(shifts)
    adv = torch.as_tensor(rng.normal(size=n))
    returns = torch.as_tensor(rng.normal(size=n))
    return obs, actions, masks, old, adv, returns


@pytest.mark.parametrize(
    "kind,action_size", [(ppo.GAUSSIAN, 1), (ppo.CATEGORICAL, 3)]
)
def test_ppo_loss_gradient(kind, action_size):
    """Test analytic loss gradients against central finite differences"""
    policy = _policy(
        obs_size=1,
        action_size=action_size,
        kind=kind,
        hidden_sizes=(1, 1),
        log_std_init=-0.3,
    )
    config = ppo.PPOConfig()
    data = _toy_data(policy, [0.05, -0.05, 0.5, -0.5, 0.05, -0.5], kind)
    params = list(policy.parameters())

    loss, _ = ppo.ppo_loss(policy, *data, config)
    policy.zero_grad()
    loss.backward()
    analytic = torch.cat([p.grad.flatten() for p in params]).numpy()

    h = 1e-6
    numeric = []
    with torch.no_grad():
        for p in params:
            flat = p.view(-1)
            for i in range(flat.numel()):
                orig = float(flat[i])
                flat[i] = orig + h
                up = float(ppo.ppo_loss(policy, *data, config)[0])
                flat[i] = orig - h
                down = float(ppo.ppo_loss(policy, *data, config)[0])
                flat[i] = orig
                numeric.append((up - down) / (2 * h))
    numeric = np.array(numeric)

    error = np.linalg.norm(analytic - numeric) / max(
        np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12
    )
    assert error < 1e-5


def test_ppo_loss_clipped_surrogate():
    """Test a ratio of 1.5 with unit advantage contributes 1.2"""
    policy = _policy(obs_size=1, action_size=1, hidden_sizes=(2,))
    obs = torch.zeros(1, 1, dtype=torch.float64)
    actions = torch.zeros(1, 1, dtype=torch.float64)
    with torch.no_grad():
        log_prob, _, _ = policy.evaluate(obs, actions)
    config = ppo.PPOConfig(vf_coef=0.0, ent_coef=0.0)
    one = torch.ones(1, dtype=torch.float64)

    _, same = ppo.ppo_loss(
        policy, obs, actions, None, log_prob, one, one, config
    )
    _, clipped = ppo.ppo_loss(
        policy, obs, actions, None, log_prob - math.log(1.5), one, one, config
    )

    assert same["policy_loss"] == pytest.approx(-1.0)
    assert same["clip_fraction"] == 0.0
    assert same["approx_kl"] == pytest.approx(0.0)
    assert clipped["policy_loss"] == pytest.approx(-1.2)
    assert clipped["clip_fraction"] == 1.0


def _batch(n=32, returns=None):
    rng = np.random.default_rng(0)
    return ppo.Batch(
        obs=rng.normal(size=(n, 4)),
        actions=rng.normal(size=(n, 2)),
        masks=np.ones((n, 2)),
        log_probs=np.full(n, -2.0),
        advantages=rng.normal(size=n),
        returns=rng.normal(size=n) if returns is None else returns,
    )


def test_ppo_update_reports_losses():
    """Test an update returns finite averaged loss components"""
    policy = _policy(obs_size=4, action_size=2, hidden_sizes=(8,))
    config = ppo.PPOConfig(epochs=2, minibatch_size=8)
    optimizer = ppo.make_optimizer(policy, config)
    before = [p.detach().clone() for p in policy.parameters()]

    report = ppo.ppo_update(
        policy, optimizer, _batch(), config, np.random.default_rng(0)
    )

    assert set(report) >= {"policy_loss", "value_loss", "grad_norm"}
    assert all(np.isfinite(v) for v in report.values())
    assert any(
        not torch.equal(a, b) for a, b in zip(before, policy.parameters())
    )


def test_ppo_update_non_finite_loss():
    """Test a non-finite loss aborts before the optimizer step"""
    policy = _policy(obs_size=4, action_size=2, hidden_sizes=(8,))
    config = ppo.PPOConfig(epochs=1, minibatch_size=8)
    optimizer = ppo.make_optimizer(policy, config)
    before = [p.detach().clone() for p in policy.parameters()]

    with pytest.raises(NonFiniteLossError) as info:
        ppo.ppo_update(
            policy,
            optimizer,
            _batch(returns=np.full(32, np.nan)),
            config,
            np.random.default_rng(0),
        )

    assert "value_loss" in info.value.diagnostic
    assert all(torch.equal(a, b) for a, b in zip(before, policy.parameters()))


def test_build_batch_pools_agents():
    """Test trajectories of several agents are pooled with their own
    advantages"""
    buffers = []
    for reward in (1.0, -1.0):
        buf = ppo.RolloutBuffer()
        for t in range(3):
            buf.add(np.zeros(2), 0, None, -1.0, 0.0, reward, t == 2)
        buffers.append(buf)
    batch = ppo.build_batch(buffers, [0.0, 0.0], ppo.PPOConfig())

    assert len(batch) == 6
    assert batch.masks is None
    assert np.all(batch.advantages[:3] > 0)
    assert np.all(batch.advantages[3:] < 0)
    with pytest.raises(ValueError):
        ppo.build_batch([ppo.RolloutBuffer()], [0.0], ppo.PPOConfig())


def test_checkpoint_round_trip():
    """Test a saved controller reproduces its forward outputs"""
    source = agent.MarlController(seed=1)
    target = agent.MarlController(seed=2)
    inputs = np.random.default_rng(0).normal(size=(100, 50))

    with tempfile.TemporaryDirectory() as tmp:
        fpath = os.path.join(tmp, "policy.bin")
        source.save(fpath)
        target.load(fpath)

    for obs in inputs:
        a, va = ppo.mlp_forward(source.inter_policy, obs)
        b, vb = ppo.mlp_forward(target.inter_policy, obs)
        assert np.array_equal(a, b) and va == vb


def test_checkpoint_keeps_adam_moments():
    """Test Adam moments survive a checkpoint"""
    policy = _policy(obs_size=4, action_size=2, hidden_sizes=(8,))
    config = ppo.PPOConfig(epochs=1, minibatch_size=32)
    optimizer = ppo.make_optimizer(policy, config)
    ppo.ppo_update(
        policy, optimizer, _batch(), config, np.random.default_rng(0)
    )
    ckpt = ppo.checkpoint_from({"inter": policy}, {"inter": optimizer}, 7)

    fresh = _policy(seed=3, obs_size=4, action_size=2, hidden_sizes=(8,))
    fresh_opt = ppo.make_optimizer(fresh, config)
    ppo.apply_checkpoint(ckpt, {"inter": fresh}, {"inter": fresh_opt})

    for p, q in zip(policy.parameters(), fresh.parameters()):
        assert torch.equal(p, q)
        assert torch.equal(
            optimizer.state[p]["exp_avg"], fresh_opt.state[q]["exp_avg"]
        )


def test_checkpoint_errors():
    """Test truncated, foreign-version and mismatched checkpoints"""
    policy = _policy(obs_size=4, action_size=2, hidden_sizes=(8,))
    ckpt = ppo.checkpoint_from({"inter": policy}, {})

    with tempfile.TemporaryDirectory() as tmp:
        fpath = os.path.join(tmp, "policy.bin")
        ppo.save_checkpoint(ckpt, fpath)
        with open(fpath, "rb") as src:
            raw = src.read()
        with open(fpath, "wb") as dst:
            dst.write(raw[:-8])
        with pytest.raises(CheckpointFormatError):
            ppo.load_checkpoint(fpath)

        with open(fpath, "wb") as dst:
            dst.write(b"NOTACKPT" + raw[8:])
        with pytest.raises(CheckpointFormatError):
            ppo.load_checkpoint(fpath)

        ppo.save_checkpoint(
            ppo.PolicyCheckpoint(ckpt.arrays, version=2), fpath
        )
        with pytest.raises(CheckpointVersionError):
            ppo.load_checkpoint(fpath)

    other = _policy(obs_size=4, action_size=2, hidden_sizes=(6,))
    with pytest.raises(CheckpointShapeError):
        ppo.apply_checkpoint(ckpt, {"inter": other})


def _episode(controller, scenario, grid):
    sim = NetworkSimulator(scenario, grid, traffic_seed=4)
    view = sim.reset()
    controller.reset(view)
    rewards = []
    done = False
    while not done:
        allocation = controller.allocate(view)
        allocation.validate(scenario)
        outcome = sim.step(allocation)
        rewards.append(controller.observe(outcome))
        view, done = outcome.view, outcome.done
    return rewards


def test_marl_controller_trains(small_scenario, small_grid):
    """Test the multi-agent controller updates both policies"""
    config = ppo.PPOConfig(batch_size=8, minibatch_size=4, epochs=2)
    controller = agent.MarlController(config, seed=0, training=True)
    rewards = _episode(controller, small_scenario, small_grid)

    assert len(rewards) == 20
    assert all(-2 <= r <= 1 for r in rewards)
    assert [u["policy"] for u in controller.updates] == [
        "inter",
        "intra",
        "inter",
        "intra",
    ]
    assert controller.updates[-1]["env_steps"] == 16


@pytest.mark.parametrize(
    "cls", [agent.IntentAwareController, agent.SchedSlicingController]
)
def test_baseline_learners_run(cls, small_scenario, small_grid):
    """Test the learning baselines run and store transitions"""
    config = ppo.PPOConfig(batch_size=64)
    controller = cls(config, seed=0, training=True)
    _episode(controller, small_scenario, small_grid)

    assert len(controller.inter_buffer) == 20
    assert controller.updates == []


def test_eval_mode_is_deterministic(small_scenario, small_grid):
    """Test evaluation runs replay identical rewards"""
    first = _episode(agent.MarlController(seed=5), small_scenario, small_grid)
    second = _episode(agent.MarlController(seed=5), small_scenario, small_grid)

    assert first == second


def _expected_case(drifts, hp):
    worst = {i: d.minimum() for i, d in drifts.items()}
    if all(w >= 0 for w in worst.values()):
        return "fulfilled"
    if any(worst[i] < 0 for i in drifts if hp[i]):
        return "hp"
    return "regular"


def test_inter_reward_ranges():
    """Test the inter-slice reward lands in the range of its case"""
    rng = np.random.default_rng(0)
    bounds = {"fulfilled": (0, 1), "hp": (-2, -1), "regular": (-1, 0)}
    for _ in range(10**5):
        n = int(rng.integers(1, 6))
        drifts, hp = {}, {}
        for i in range(1, n + 1):
            active = rng.random(3) < 0.5
            active[rng.integers(3)] = True
            values = np.round(rng.uniform(-1, 1, 3), 1)
            thr, lat, loss = (
                float(v) if a else None for v, a in zip(values, active)
            )
            drifts[i] = IntentDrift(thr=thr, lat=lat, loss=loss)
            hp[i] = bool(rng.random() < 0.4)
        rewards = {i: agent.intra_reward(d) for i, d in drifts.items()}
        reward = agent.inter_reward(rewards, drifts, hp)
        low, high = bounds[_expected_case(drifts, hp)]

        assert low <= reward <= high


def test_inter_reward_two_slices():
    """Test every two-slice case against its hand-worked value"""
    grid = [-1.0, -0.5, 0.0, 0.5, 1.0]
    for a in grid:
        for b in grid:
            for hp_a in (False, True):
                for hp_b in (False, True):
                    drifts = {1: IntentDrift(thr=a), 2: IntentDrift(lat=b)}
                    hp = {1: hp_a, 2: hp_b}
                    rewards = {1: a, 2: b}
                    if a >= 0 and b >= 0:
                        expected = (a + b) / 2
                    else:
                        hp_bad = [
                            v for v, h in ((a, hp_a), (b, hp_b)) if h and v < 0
                        ]
                        bad = [v for v in (a, b) if v < 0]
                        expected = (
                            np.mean(hp_bad) - 1 if hp_bad else np.mean(bad)
                        )

                    assert agent.inter_reward(
                        rewards, drifts, hp
                    ) == pytest.approx(expected)


def _gae_brute_force(rewards, values, dones, last_value, gamma, lam):
    n = len(rewards)
    nxt = list(values[1:]) + [last_value]
    deltas = [
        rewards[t] + gamma * nxt[t] * (1 - dones[t]) - values[t]
        for t in range(n)
    ]
    advantages = []
    for t in range(n):
        total = 0.0
        for k in range(n - t):
            total += (gamma * lam) ** k * deltas[t + k]
            if dones[t + k]:
                break
        advantages.append(total)
    return advantages


def test_gae_brute_force():
    """Test GAE against the explicit discounted sum of TD errors"""
    rng = np.random.default_rng(0)
    for _ in range(100):
        rewards = rng.normal(size=10)
        values = rng.normal(size=10)
        dones = (rng.random(10) < 0.2).astype(float)
        last_value = float(rng.normal())
        gamma, lam = rng.uniform(0.8, 1.0), rng.uniform(0.8, 1.0)
        adv, ret = ppo.gae(rewards, values, dones, last_value, gamma, lam)
        expected = _gae_brute_force(
            rewards, values, dones, last_value, gamma, lam
        )

        assert np.allclose(adv, expected, rtol=0, atol=1e-12)
        assert np.allclose(ret, adv + values, rtol=0, atol=1e-12)
