import copy
import itertools
import logging
import math
from dataclasses import dataclass
from typing import Any, Mapping, Union

import numpy as np
import torch
from torch.distributions import Normal

from intent_rrs.intent.intent import IntentDrift, cv
from intent_rrs.intent_rrs import Controller
from intent_rrs.sched import settings as sched_settings
from intent_rrs.sched.sched import (
    chi_allocate,
    intent_aware_reward,
    intra_allocation,
    sched_slicing_reward,
)
from intent_rrs.simnet.simnet import Allocation, NetworkView, StepOutcome

from . import settings
from .ppo import (
    CATEGORICAL,
    GAUSSIAN,
    ActorCritic,
    PPOConfig,
    RolloutBuffer,
    apply_checkpoint,
    build_batch,
    checkpoint_from,
    load_checkpoint,
    make_optimizer,
    ppo_update,
    save_checkpoint,
)

logger = logging.getLogger(__name__)


@dataclass
class InterObservation:
    """
    Inter-slice observation.

    Attributes
    ----------
    vector : np.ndarray
        One block of `settings.inter_block_size` entries per position.
    order : list[int]
        Slice index shown at each position.
    mask : np.ndarray
        True at the positions holding an active slice.
    """

    vector: np.ndarray
    order: list
    mask: np.ndarray


@dataclass
class PolicySample:
    """An action drawn from a policy, with its log-probability and the
    value estimate of the observation."""

    action: Any
    log_prob: float
    value: float
    raw: Any = None


def _intent_entries(drift: IntentDrift, spec) -> list[float]:
    m = [float(f) for f in spec.active_intents]
    d = [drift.thr or 0.0, drift.lat or 0.0, drift.loss or 0.0]
    return [m[0] * d[0], m[1] * d[1], m[2] * d[2]] + m


def _unit(value: float) -> float:
    return float(min(max(value, 0.0), 1.0))


def inter_order(view: NetworkView) -> list[int]:
    """
    Slice indexes by position: active slices by throughput intent
    descending (absent counts as 0), ties by index, then inactive slots.
    """
    active = sorted(
        view.scenario.slices,
        key=lambda s: (-(s.spec.thr_req or 0.0), s.index),
    )
    order = [s.index for s in active]
    order += [i for i in range(1, view.params.slots + 1) if i not in order]
    return order


def build_inter_obs(view: NetworkView) -> InterObservation:
    """
    Ordered inter-slice observation of the current step.

    Each active slice contributes its flagged drifts, intent flags,
    priority, normalized throughput intent, UE count and mean SE;
    inactive positions are zero blocks.
    """
    order = inter_order(view)
    size = settings.inter_block_size
    vector = np.zeros(view.params.slots * size)
    mask = np.zeros(view.params.slots, dtype=bool)
    for k, index in enumerate(order):
        sl = view.scenario.slice_at(index)
        if sl is None:
            continue
        spec = sl.spec
        block = _intent_entries(view.slice_drifts[index], spec) + [
            1.0 if spec.high_priority else 0.0,
            _unit((spec.thr_req or 0.0) / settings.thr_req_max),
            _unit(sl.ue_count / settings.ue_max),
            _unit(view.slice_mean_se(index) / settings.se_max),
        ]
        vector[k * size : (k + 1) * size] = block
        mask[k] = True
    return InterObservation(vector=vector, order=order, mask=mask)


def build_intra_obs(view: NetworkView, index: int, grant: int) -> np.ndarray:
    """
    Intra-slice observation of slice `index` given its RBG grant.

    Per-UE buffer occupancy and mean SE are padded with zeros to
    `settings.intra_ue_slots` UEs.
    """
    sl = view.scenario.slice_at(index)
    if sl is None:
        raise ValueError(f"slice {index} is not active")
    n = settings.intra_ue_slots
    if sl.ue_count > n:
        raise ValueError(f"slice {index} has more than {n} UEs")
    r = view.ue_range(index)
    occupancy = np.zeros(n)
    occupancy[: sl.ue_count] = view.ue_buffer_occ[r.start : r.stop]
    se = np.zeros(n)
    se[: sl.ue_count] = np.clip(
        view.ue_mean_se[r.start : r.stop] / settings.se_max, 0, 1
    )
    head = _intent_entries(view.slice_drifts[index], sl.spec) + [
        grant / view.params.rbg_count,
        _unit((sl.spec.thr_req or 0.0) / settings.thr_req_max),
        _unit(sl.ue_count / settings.ue_max),
    ]
    return np.concatenate([head, occupancy, se])


def build_intent_aware_obs(view: NetworkView) -> InterObservation:
    """
    Raw per-slice metrics in slot order: intents (absent as 0), mean SE
    and the previous step's served and effective throughput, occupancy,
    latency, loss and arrivals. Inactive slots are zero blocks.
    """
    size = settings.inter_block_size
    vector = np.zeros(view.params.slots * size)
    last = view.last_metrics
    for sl in view.scenario.slices:
        spec = sl.spec
        m = None if last is None else last.slices[sl.index]
        block = [
            spec.thr_req or 0.0,
            spec.lat_req or 0.0,
            spec.loss_req or 0.0,
            view.slice_mean_se(sl.index),
        ]
        if m is None:
            block += [0.0] * 6
        else:
            block += [
                m.served,
                m.effective,
                m.buffer_occ,
                m.latency,
                m.loss,
                m.arrivals,
            ]
        k = sl.index - 1
        vector[k * size : (k + 1) * size] = block
    return InterObservation(
        vector=vector,
        order=list(range(1, view.params.slots + 1)),
        mask=view.active_mask,
    )


def sample_inter_action(
    policy: ActorCritic,
    obs: np.ndarray,
    active_mask: np.ndarray,
    rng: np.random.Generator,
    deterministic: bool = False,
) -> PolicySample:
    """
    Draw inter-slice action factors.

    Active slots get a Gaussian sample clipped to [-1, 1], or the mean when
    `deterministic`; masked slots get -1 and add nothing to the
    log-probability. `raw` holds the unclipped sample the log-probability
    refers to.
    """
    mask = np.asarray(active_mask, dtype=bool)
    with torch.no_grad():
        mean, value = policy(torch.as_tensor(obs, dtype=torch.float64))
        std = policy.log_std.exp()
    mean_np = mean.numpy()
    if deterministic:
        raw = mean_np.copy()
    else:
        raw = mean_np + std.numpy() * rng.standard_normal(len(mean_np))
    raw = np.where(mask, raw, -1.0)
    log_prob = float(
        (
            Normal(mean, std).log_prob(torch.as_tensor(raw))
            * torch.as_tensor(mask, dtype=torch.float64)
        ).sum()
    )
    factors = np.where(mask, np.clip(raw, -1.0, 1.0), -1.0)
    return PolicySample(factors, log_prob, float(value), raw)


def sample_intra_action(
    policy: ActorCritic,
    obs: np.ndarray,
    rng: np.random.Generator,
    deterministic: bool = False,
) -> PolicySample:
    """Draw an intra-slice kernel: 0 round robin, 1 proportional fair,
    2 maximum throughput."""
    with torch.no_grad():
        logits, value = policy(torch.as_tensor(obs, dtype=torch.float64))
        log_probs = torch.log_softmax(logits, -1).numpy()
    if deterministic:
        choice = int(np.argmax(log_probs))
    else:
        probs = np.exp(log_probs)
        choice = int(rng.choice(len(probs), p=probs / probs.sum()))
    return PolicySample(choice, float(log_probs[choice]), float(value), choice)


def intra_reward(drift: IntentDrift) -> float:
    """Worst drift among the active intents of a slice."""
    return drift.minimum()


def inter_reward(
    intra_rewards: Mapping[int, float],
    drifts: Mapping[int, IntentDrift],
    high_priority: Mapping[int, bool],
) -> float:
    """
    Inter-slice reward.

    The mean intra-slice reward of the active slices when all are
    fulfilled, in [0, 1]; otherwise the mean over the unfulfilled
    high-priority slices minus 1, in [-2, -1), if any; otherwise the mean
    over the unfulfilled slices, in [-1, 0).
    """
    if cv(drifts.values()) == 0:
        return float(np.mean([intra_rewards[i] for i in drifts]))
    unfulfilled = [i for i, d in drifts.items() if d.violated]
    hp = [i for i in drifts if high_priority[i]]
    if cv(drifts[i] for i in hp) < 0:
        hp_unfulfilled = [i for i in unfulfilled if high_priority[i]]
        return float(np.mean([intra_rewards[i] for i in hp_unfulfilled]) - 1)
    return float(np.mean([intra_rewards[i] for i in unfulfilled]))


def ordered_state_reduction(
    slots: int = settings.slots, types: int = 10, enumerate_states=False
) -> tuple[int, int, float]:
    """
    State count of the ordered slice representation versus unordered
    slot tuples.

    Returns ``(multisets, tuples, reduction)`` with multisets the number
    of ways to fill `slots` ordered positions from `types` slice types,
    tuples ``(types + 1) ** slots`` (each slot possibly empty) and the
    reduction in percent. With `enumerate_states` both counts are
    obtained by enumeration.
    """
    if enumerate_states:
        multisets = sum(
            1
            for _ in itertools.combinations_with_replacement(
                range(types), slots
            )
        )
        tuples = sum(
            1 for _ in itertools.product(range(types + 1), repeat=slots)
        )
    else:
        multisets = math.comb(types + slots - 1, slots)
        tuples = (types + 1) ** slots
    return multisets, tuples, 100 * (1 - multisets / tuples)


class PpoController(Controller):
    """
    Inter-slice PPO agent mapping its action factors to RBGs through
    `chi_allocate()`, with round robin inside every slice.

    Subclasses choose the observation and the reward. In training mode
    actions are sampled and transitions stored; the policy is updated
    every `PPOConfig.batch_size` steps. Otherwise actions are the
    distribution means.

    Parameters
    ----------
    config : Union[None, PPOConfig]
        PPO hyper-parameters.
    seed : int
        Seed of parameter initialization, action sampling and minibatch
        shuffling.
    training : bool
        Whether to sample and learn.
    """

    name = "ppo"

    def __init__(
        self,
        config: Union[None, PPOConfig] = None,
        seed: int = 0,
        training: bool = False,
    ):
        self.config = config or PPOConfig()
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        torch.manual_seed(seed)
        self.inter_policy = ActorCritic(
            settings.inter_obs_size,
            settings.slots,
            GAUSSIAN,
            self.config.hidden_sizes,
            self.config.log_std_init,
        )
        self.inter_optimizer = make_optimizer(self.inter_policy, self.config)
        self.inter_buffer = RolloutBuffer()
        self.training = training
        self.train_steps = 0
        self.updates = []
        self._pending = None

    def policies(self) -> dict:
        return {"inter": self.inter_policy}

    def optimizers(self) -> dict:
        return {"inter": self.inter_optimizer}

    def inter_observation(self, view: NetworkView) -> InterObservation:
        return build_inter_obs(view)

    def reward(self, outcome: StepOutcome) -> float:
        raise NotImplementedError

    def reset(self, view: NetworkView) -> None:
        self._pending = None

    def _inter(
        self, view: NetworkView
    ) -> tuple[InterObservation, PolicySample, np.ndarray]:
        obs = self.inter_observation(view)
        sample = sample_inter_action(
            self.inter_policy,
            obs.vector,
            obs.mask,
            self.rng,
            deterministic=not self.training,
        )
        factors = np.full(view.params.slots, -1.0)
        for k, index in enumerate(obs.order):
            if obs.mask[k]:
                factors[index - 1] = sample.action[k]
        inter = chi_allocate(
            factors, view.active_mask, view.params.rbg_count
        )
        return obs, sample, inter

    def allocate(self, view: NetworkView) -> Allocation:
        obs, sample, inter = self._inter(view)
        kernels = {i: "rr" for i in view.scenario.active_indexes}
        self._pending = (obs, sample)
        return Allocation(inter, intra_allocation(view, inter, kernels))

    def observe(self, outcome: StepOutcome) -> float:
        reward = self.reward(outcome)
        if self.training:
            obs, sample = self._pending
            self.inter_buffer.add(
                obs.vector,
                sample.raw,
                obs.mask,
                sample.log_prob,
                sample.value,
                reward,
                outcome.done,
            )
            self._record(outcome)
            self.train_steps += 1
            if len(self.inter_buffer) >= self.config.batch_size:
                self.update(outcome)
        return reward

    def _record(self, outcome: StepOutcome) -> None:
        pass

    def _bootstrap(self, policy: ActorCritic, obs: np.ndarray) -> float:
        with torch.no_grad():
            _, value = policy(torch.as_tensor(obs, dtype=torch.float64))
        return float(value)

    def _update_policy(self, name, policy, optimizer, buffers, last_values):
        batch = build_batch(buffers, last_values, self.config)
        report = ppo_update(policy, optimizer, batch, self.config, self.rng)
        report.update(
            update=len(self.updates) // len(self.policies()),
            env_steps=self.train_steps,
            policy=name,
        )
        self.updates.append(report)
        logger.info(
            "%s update at %d steps: %s loss %.4f, grad norm %.3f",
            self.name,
            self.train_steps,
            name,
            report["total_loss"],
            report["grad_norm"],
        )

    def update(self, outcome: StepOutcome) -> None:
        """Update the policies from the stored transitions and clear them."""
        last = 0.0
        if not outcome.done:
            last = self._bootstrap(
                self.inter_policy,
                self.inter_observation(outcome.view).vector,
            )
        self._update_policy(
            "inter",
            self.inter_policy,
            self.inter_optimizer,
            [self.inter_buffer],
            [last],
        )
        self.inter_buffer.clear()

    def state(self) -> dict:
        """Snapshot of the policy parameters."""
        return {
            name: copy.deepcopy(policy.state_dict())
            for name, policy in self.policies().items()
        }

    def restore(self, state: dict) -> None:
        for name, policy in self.policies().items():
            policy.load_state_dict(state[name])

    def save(self, path: str) -> None:
        save_checkpoint(
            checkpoint_from(
                self.policies(), self.optimizers(), self.train_steps
            ),
            path,
        )

    def load(self, path: str, optimizer_state: bool = True) -> None:
        """Initialize the policies (and Adam moments) from a checkpoint."""
        checkpoint = load_checkpoint(path)
        apply_checkpoint(
            checkpoint,
            self.policies(),
            self.optimizers() if optimizer_state else None,
        )


class IntentAwareController(PpoController):
    """PPO inter-slice agent on raw slice metrics, rewarded by the
    priority-weighted negative drifts."""

    name = "intent_aware"

    def inter_observation(self, view: NetworkView) -> InterObservation:
        return build_intent_aware_obs(view)

    def reward(self, outcome: StepOutcome) -> float:
        scenario = outcome.view.scenario
        return intent_aware_reward(
            outcome.drifts,
            {s.index: s.spec.high_priority for s in scenario.slices},
        )


class SchedSlicingController(PpoController):
    """PPO inter-slice agent rewarded by eMBB throughput and penalized by
    URLLC buffered data."""

    name = "sched_slicing"

    def reward(self, outcome: StepOutcome) -> float:
        scenario = outcome.view.scenario
        return sched_slicing_reward(
            {s.index: s.spec for s in scenario.slices},
            outcome.metrics.slices,
        )


class MarlController(PpoController):
    """
    Priority-aware scheduler: one inter-slice PPO agent and one intra-slice
    agent per active slice, the intra agents sharing a single categorical
    policy that picks round robin, proportional fair or maximum throughput.
    """

    name = "proposed"

    def __init__(
        self,
        config: Union[None, PPOConfig] = None,
        seed: int = 0,
        training: bool = False,
    ):
        super().__init__(config, seed, training)
        self.intra_policy = ActorCritic(
            settings.intra_obs_size,
            settings.intra_actions,
            CATEGORICAL,
            self.config.hidden_sizes,
        )
        self.intra_optimizer = make_optimizer(self.intra_policy, self.config)
        self.intra_buffers: dict[int, RolloutBuffer] = {}
        self._intra_pending = {}

    def policies(self) -> dict:
        return {"inter": self.inter_policy, "intra": self.intra_policy}

    def optimizers(self) -> dict:
        return {"inter": self.inter_optimizer, "intra": self.intra_optimizer}

    def allocate(self, view: NetworkView) -> Allocation:
        obs, sample, inter = self._inter(view)
        kernels = {}
        intra_samples = {}
        for index in view.scenario.active_indexes:
            grant = int(inter[index - 1])
            intra_obs = build_intra_obs(view, index, grant)
            choice = sample_intra_action(
                self.intra_policy,
                intra_obs,
                self.rng,
                deterministic=not self.training,
            )
            kernels[index] = sched_settings.intra_kernels[choice.action]
            intra_samples[index] = (intra_obs, choice, grant)
        self._pending = (obs, sample)
        self._intra_pending = intra_samples
        return Allocation(inter, intra_allocation(view, inter, kernels))

    def reward(self, outcome: StepOutcome) -> float:
        scenario = outcome.view.scenario
        self._intra_rewards = {
            i: intra_reward(d) for i, d in outcome.drifts.items()
        }
        return inter_reward(
            self._intra_rewards,
            outcome.drifts,
            {s.index: s.spec.high_priority for s in scenario.slices},
        )

    def _record(self, outcome: StepOutcome) -> None:
        for index, (obs, choice, _) in self._intra_pending.items():
            buf = self.intra_buffers.setdefault(index, RolloutBuffer())
            buf.add(
                obs,
                choice.raw,
                None,
                choice.log_prob,
                choice.value,
                self._intra_rewards[index],
                outcome.done,
            )

    def update(self, outcome: StepOutcome) -> None:
        indexes = sorted(self.intra_buffers)
        buffers = [self.intra_buffers[i] for i in indexes]
        last_values = []
        for index in indexes:
            active = outcome.view.scenario.slice_at(index) is not None
            if outcome.done or not active:
                last_values.append(0.0)
                continue
            # the next grant is unknown until the next inter action
            grant = self._intra_pending[index][2]
            last_values.append(
                self._bootstrap(
                    self.intra_policy,
                    build_intra_obs(outcome.view, index, grant),
                )
            )
        super().update(outcome)
        self._update_policy(
            "intra",
            self.intra_policy,
            self.intra_optimizer,
            buffers,
            last_values,
        )
        self.intra_buffers = {}
