import json
import logging
import struct
from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

import numpy as np
import torch
from torch import nn
from torch.distributions import Categorical, Normal

from intent_rrs.intent_rrs import (
    CheckpointFormatError,
    CheckpointShapeError,
    CheckpointVersionError,
    NonFiniteLossError,
)

from . import settings

logger = logging.getLogger(__name__)

GAUSSIAN = "gaussian"
CATEGORICAL = "categorical"


@dataclass
class PPOConfig:
    hidden_sizes: tuple = settings.hidden_sizes
    learning_rate: float = settings.learning_rate
    adam_betas: tuple = settings.adam_betas
    adam_eps: float = settings.adam_eps
    clip_range: float = settings.clip_range
    vf_coef: float = settings.vf_coef
    ent_coef: float = settings.ent_coef
    max_grad_norm: float = settings.max_grad_norm
    epochs: int = settings.epochs
    minibatch_size: int = settings.minibatch_size
    batch_size: int = settings.batch_size
    gamma: float = settings.gamma
    gae_lambda: float = settings.gae_lambda
    advantage_eps: float = settings.advantage_eps
    log_std_init: float = settings.log_std_init

    def __post_init__(self):
        self.hidden_sizes = tuple(self.hidden_sizes)
        self.adam_betas = tuple(self.adam_betas)
        if self.batch_size < 1 or self.minibatch_size < 1 or self.epochs < 1:
            raise ValueError("batch, minibatch and epoch counts must be >= 1")
        if not 0 < self.clip_range < 1:
            raise ValueError("clip_range must be in (0, 1)")
        if not 0 <= self.gamma <= 1 or not 0 <= self.gae_lambda <= 1:
            raise ValueError("gamma and gae_lambda must be in [0, 1]")


class ActorCritic(nn.Module):
    """
    Actor-critic network with a shared tanh trunk and separate actor and
    critic heads.

    A Gaussian policy outputs one mean per action slot and carries a
    state-independent log standard deviation per slot; a categorical
    policy outputs one logit per choice. Parameters are float64.

    Parameters
    ----------
    obs_size : int
        Observation length.
    action_size : int
        Action slots (Gaussian) or choices (categorical).
    kind : str
        ``gaussian`` or ``categorical``.
    hidden_sizes : Sequence[int]
        Widths of the trunk layers.
    log_std_init : float
        Initial log standard deviation of a Gaussian policy.
    """

    def __init__(
        self,
        obs_size: int,
        action_size: int,
        kind: str = GAUSSIAN,
        hidden_sizes: Sequence[int] = settings.hidden_sizes,
        log_std_init: float = settings.log_std_init,
    ):
        super().__init__()
        if kind not in (GAUSSIAN, CATEGORICAL):
            raise ValueError(f"unknown policy kind '{kind}'")
        self.obs_size = obs_size
        self.action_size = action_size
        self.kind = kind

        layers = []
        width = obs_size
        for hidden in hidden_sizes:
            layers += [nn.Linear(width, hidden), nn.Tanh()]
            width = hidden
        self.trunk = nn.Sequential(*layers)
        self.actor = nn.Linear(width, action_size)
        self.critic = nn.Linear(width, 1)
        if kind == GAUSSIAN:
            self.log_std = nn.Parameter(
                torch.full((action_size,), float(log_std_init))
            )
        self.double()

    def forward(self, obs: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Actor head output (means or logits) and value estimate."""
        h = self.trunk(obs)
        return self.actor(h), self.critic(h).squeeze(-1)

    def evaluate(
        self,
        obs: torch.Tensor,
        actions: torch.Tensor,
        masks: Union[None, torch.Tensor] = None,
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """
        Log-probability and entropy of `actions` and the value estimate.

        Masked Gaussian slots contribute neither log-probability nor
        entropy.
        """
        head, value = self(obs)
        if self.kind == GAUSSIAN:
            dist = Normal(head, self.log_std.exp().expand_as(head))
            if masks is None:
                masks = torch.ones_like(head)
            log_prob = (dist.log_prob(actions) * masks).sum(-1)
            entropy = (dist.entropy() * masks).sum(-1)
        else:
            dist = Categorical(logits=head)
            log_prob = dist.log_prob(actions.long())
            entropy = dist.entropy()
        return log_prob, entropy, value


def mlp_forward(
    policy: ActorCritic, obs: np.ndarray
) -> tuple[np.ndarray, float]:
    """Actor head and value of one observation, without gradients."""
    with torch.no_grad():
        head, value = policy(torch.as_tensor(obs, dtype=torch.float64))
    return head.numpy(), float(value)


def make_optimizer(
    policy: ActorCritic, config: PPOConfig
) -> torch.optim.Adam:
    return torch.optim.Adam(
        policy.parameters(),
        lr=config.learning_rate,
        betas=config.adam_betas,
        eps=config.adam_eps,
    )


def gae(
    rewards: Sequence[float],
    values: Sequence[float],
    dones: Sequence[float],
    last_value: float = 0.0,
    gamma: float = settings.gamma,
    lam: float = settings.gae_lambda,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Generalized advantage estimation over one trajectory.

    Parameters
    ----------
    rewards, values : Sequence[float]
        Reward and value estimate of each step.
    dones : Sequence[float]
        1 where the step ends an episode, 0 elsewhere.
    last_value : float
        Value of the state following the last step, used unless the last
        step ends an episode.
    gamma, lam : float
        Discount and GAE smoothing factors.

    Returns
    -------
    tuple[np.ndarray, np.ndarray]
        Advantages and returns (advantages plus values).
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=float)
    advantages = np.zeros(len(rewards))
    next_value = last_value
    running = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * live - values[t]
        running = delta + gamma * lam * live * running
        advantages[t] = running
        next_value = values[t]
    return advantages, advantages + values


@dataclass
class RolloutBuffer:
    """Transitions of one agent, in step order."""

    obs: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    masks: list = field(default_factory=list)
    log_probs: list = field(default_factory=list)
    values: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    dones: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rewards)

    def add(self, obs, action, mask, log_prob, value, reward, done) -> None:
        self.obs.append(np.asarray(obs, dtype=float))
        self.actions.append(action)
        self.masks.append(None if mask is None else np.asarray(mask, float))
        self.log_probs.append(float(log_prob))
        self.values.append(float(value))
        self.rewards.append(float(reward))
        self.dones.append(float(done))

    def clear(self) -> None:
        for name in self.__dataclass_fields__:
            getattr(self, name).clear()


@dataclass
class Batch:
    obs: np.ndarray
    actions: np.ndarray
    masks: Union[None, np.ndarray]
    log_probs: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray

    def __len__(self) -> int:
        return len(self.log_probs)


def build_batch(
    buffers: Sequence[RolloutBuffer],
    last_values: Sequence[float],
    config: PPOConfig,
) -> Batch:
    """
    Pool the trajectories of several agents sharing one policy, each with
    its own advantage estimate.
    """
    parts = []
    for buf, last in zip(buffers, last_values):
        if not len(buf):
            continue
        adv, ret = gae(
            buf.rewards,
            buf.values,
            buf.dones,
            last,
            config.gamma,
            config.gae_lambda,
        )
        parts.append((buf, adv, ret))
    if not parts:
        raise ValueError("no transitions to train on")

    masks = None
    if parts[0][0].masks[0] is not None:
        masks = np.concatenate([np.stack(b.masks) for b, _, _ in parts])
    return Batch(
        obs=np.concatenate([np.stack(b.obs) for b, _, _ in parts]),
        actions=np.concatenate([np.asarray(b.actions) for b, _, _ in parts]),
        masks=masks,
        log_probs=np.concatenate([b.log_probs for b, _, _ in parts]),
        advantages=np.concatenate([a for _, a, _ in parts]),
        returns=np.concatenate([r for _, _, r in parts]),
    )


def ppo_loss(
    policy: ActorCritic,
    obs: torch.Tensor,
    actions: torch.Tensor,
    masks: Union[None, torch.Tensor],
    old_log_probs: torch.Tensor,
    advantages: torch.Tensor,
    returns: torch.Tensor,
    config: PPOConfig,
) -> tuple[torch.Tensor, dict]:
    """
    PPO total loss: clipped surrogate, value error and entropy bonus.

    Returns
    -------
    tuple[torch.Tensor, dict]
        The loss tensor and its components as floats.
    """
    log_probs, entropy, values = policy.evaluate(obs, actions, masks)
    log_ratio = log_probs - old_log_probs
    ratio = log_ratio.exp()
    eps = config.clip_range
    surrogate = torch.min(
        ratio * advantages, ratio.clamp(1 - eps, 1 + eps) * advantages
    )
    policy_loss = -surrogate.mean()
    value_loss = ((values - returns) ** 2).mean()
    entropy_mean = entropy.mean()
    total = (
        policy_loss
        + config.vf_coef * value_loss
        - config.ent_coef * entropy_mean
    )
    with torch.no_grad():
        components = {
            "policy_loss": float(policy_loss),
            "value_loss": float(value_loss),
            "entropy": float(entropy_mean),
            "total_loss": float(total),
            "approx_kl": float(((ratio - 1) - log_ratio).mean()),
            "clip_fraction": float(
                ((ratio - 1).abs() > eps).double().mean()
            ),
        }
    return total, components


def _tensor(x) -> torch.Tensor:
    return torch.as_tensor(x, dtype=torch.float64)


def ppo_update(
    policy: ActorCritic,
    optimizer: torch.optim.Optimizer,
    batch: Batch,
    config: PPOConfig,
    rng: np.random.Generator,
) -> dict:
    """
    Run the PPO epochs over shuffled minibatches of `batch`.

    Advantages are normalized per minibatch. Raises `NonFiniteLossError`
    before any step that would apply a non-finite loss.

    Returns
    -------
    dict
        Loss components and gradient norm averaged over minibatches.
    """
    obs = _tensor(batch.obs)
    actions = _tensor(batch.actions)
    masks = None if batch.masks is None else _tensor(batch.masks)
    old_log_probs = _tensor(batch.log_probs)
    advantages = _tensor(batch.advantages)
    returns = _tensor(batch.returns)

    totals = {}
    count = 0
    n = len(batch)
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.minibatch_size):
            idx = torch.as_tensor(order[start : start + config.minibatch_size])
            adv = advantages[idx]
            adv = (adv - adv.mean()) / (
                adv.std(unbiased=False) + config.advantage_eps
            )
            loss, components = ppo_loss(
                policy,
                obs[idx],
                actions[idx],
                None if masks is None else masks[idx],
                old_log_probs[idx],
                adv,
                returns[idx],
                config,
            )
            if not torch.isfinite(loss):
                raise NonFiniteLossError(
                    f"non-finite PPO loss {float(loss)}", components
                )
            optimizer.zero_grad()
            loss.backward()
            grad_norm = nn.utils.clip_grad_norm_(
                policy.parameters(), config.max_grad_norm
            )
            optimizer.step()

            components["grad_norm"] = float(grad_norm)
            for key, value in components.items():
                totals[key] = totals.get(key, 0.0) + value
            count += 1
    return {key: value / count for key, value in totals.items()}


@dataclass
class PolicyCheckpoint:
    """
    Parameters and Adam moments of a set of named policies.

    Array names are ``<policy>/param/<parameter>`` and
    ``<policy>/adam/<parameter>/<exp_avg|exp_avg_sq|step>``.
    """

    arrays: dict
    train_steps: int = 0
    version: int = settings.checkpoint_version


_LENGTH = struct.Struct("<I")


def checkpoint_from(
    policies: Mapping[str, ActorCritic],
    optimizers: Mapping[str, torch.optim.Optimizer],
    train_steps: int = 0,
) -> PolicyCheckpoint:
    arrays = {}
    for name, policy in policies.items():
        optimizer = optimizers.get(name)
        for pname, param in policy.named_parameters():
            arrays[f"{name}/param/{pname}"] = (
                param.detach().numpy().astype(np.float64).copy()
            )
            state = {} if optimizer is None else optimizer.state.get(param, {})
            zeros = np.zeros(tuple(param.shape))
            arrays[f"{name}/adam/{pname}/exp_avg"] = (
                state["exp_avg"].numpy().astype(np.float64).copy()
                if "exp_avg" in state
                else zeros
            )
            arrays[f"{name}/adam/{pname}/exp_avg_sq"] = (
                state["exp_avg_sq"].numpy().astype(np.float64).copy()
                if "exp_avg_sq" in state
                else zeros.copy()
            )
            arrays[f"{name}/adam/{pname}/step"] = np.array(
                [float(state["step"]) if "step" in state else 0.0]
            )
    return PolicyCheckpoint(arrays=arrays, train_steps=train_steps)


def apply_checkpoint(
    checkpoint: PolicyCheckpoint,
    policies: Mapping[str, ActorCritic],
    optimizers: Union[None, Mapping[str, torch.optim.Optimizer]] = None,
) -> None:
    """
    Copy checkpoint parameters, and optionally Adam moments, into policies.

    Raises `CheckpointShapeError` if a parameter is missing or its shape
    differs from the policy's.
    """
    arrays = checkpoint.arrays
    for name, policy in policies.items():
        for pname, param in policy.named_parameters():
            key = f"{name}/param/{pname}"
            if key not in arrays:
                raise CheckpointShapeError(f"checkpoint lacks '{key}'")
            if tuple(arrays[key].shape) != tuple(param.shape):
                raise CheckpointShapeError(
                    f"'{key}': checkpoint shape {arrays[key].shape}, "
                    f"policy shape {tuple(param.shape)}"
                )
        with torch.no_grad():
            for pname, param in policy.named_parameters():
                param.copy_(torch.as_tensor(arrays[f"{name}/param/{pname}"]))

        optimizer = None if optimizers is None else optimizers.get(name)
        if optimizer is None:
            continue
        state_dict = optimizer.state_dict()
        state = {}
        ids = state_dict["param_groups"][0]["params"]
        for pid, (pname, _) in zip(ids, policy.named_parameters()):
            prefix = f"{name}/adam/{pname}"
            step = float(arrays[f"{prefix}/step"][0])
            if step == 0:
                continue
            state[pid] = {
                "step": torch.tensor(step),
                "exp_avg": torch.as_tensor(
                    arrays[f"{prefix}/exp_avg"]
                ).clone(),
                "exp_avg_sq": torch.as_tensor(
                    arrays[f"{prefix}/exp_avg_sq"]
                ).clone(),
            }
        state_dict["state"] = state
        optimizer.load_state_dict(state_dict)


def save_checkpoint(checkpoint: PolicyCheckpoint, path: str) -> None:
    """
    Write a checkpoint file.

    The file holds the magic bytes ``RRSCKPT1``, a little-endian uint32
    header length, a JSON header (version, train_steps, array names and
    shapes) and the arrays as little-endian float64 values in header order.
    """
    header = {
        "version": checkpoint.version,
        "train_steps": checkpoint.train_steps,
        "arrays": [
            {"name": name, "shape": list(array.shape)}
            for name, array in checkpoint.arrays.items()
        ],
    }
    raw_header = json.dumps(header).encode()
    with open(path, "wb") as dst:
        dst.write(settings.checkpoint_magic)
        dst.write(_LENGTH.pack(len(raw_header)))
        dst.write(raw_header)
        for array in checkpoint.arrays.values():
            dst.write(np.ascontiguousarray(array, dtype="<f8").tobytes())
    logger.info("wrote checkpoint %s", path)


def load_checkpoint(path: str) -> PolicyCheckpoint:
    """Read a checkpoint file written by `save_checkpoint()`."""
    with open(path, "rb") as src:
        raw = src.read()

    magic = settings.checkpoint_magic
    if len(raw) < len(magic) + _LENGTH.size or not raw.startswith(magic):
        raise CheckpointFormatError(f"{path}: not a policy checkpoint")
    (length,) = _LENGTH.unpack_from(raw, len(magic))
    start = len(magic) + _LENGTH.size
    try:
        header = json.loads(raw[start : start + length].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointFormatError(f"{path}: truncated header") from e
    if header.get("version") != settings.checkpoint_version:
        raise CheckpointVersionError(
            f"{path}: version {header.get('version')}, expected "
            f"{settings.checkpoint_version}"
        )

    offset = start + length
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape, dtype=np.int64)) * 8
        if offset + size > len(raw):
            raise CheckpointFormatError(f"{path}: truncated payload")
        arrays[entry["name"]] = (
            np.frombuffer(raw, dtype="<f8", count=size // 8, offset=offset)
            .reshape(shape)
            .astype(np.float64)
        )
        offset += size
    if offset != len(raw):
        raise CheckpointFormatError(f"{path}: trailing bytes")
    logger.info("loaded checkpoint %s", path)
    return PolicyCheckpoint(
        arrays=arrays,
        train_steps=int(header.get("train_steps", 0)),
        version=header["version"],
    )
