import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial
from typing import Sequence, Union

import numpy as np
import pandas as pd

from intent_rrs.agent import settings as agent_settings
from intent_rrs.agent.agent import (
    IntentAwareController,
    MarlController,
    PpoController,
    SchedSlicingController,
    inter_reward,
    intra_reward,
)
from intent_rrs.agent.ppo import PPOConfig
from intent_rrs.channel.channel import (
    ChannelParams,
    SEGrid,
    generate_se_grid,
    params_metadata,
    save_se_grid,
    simulate_mobility,
)
from intent_rrs.intent.intent import cv
from intent_rrs.intent_rrs import (
    ConfigError,
    Controller,
    NonFiniteLossError,
    RunData,
)
from intent_rrs.scenario.scenario import (
    NetworkScenario,
    SliceSpec,
    scenario_from_seed,
    scenario_seed,
)
from intent_rrs.sched.sched import MapfController, MarrController
from intent_rrs.simnet.simnet import NetworkSimulator, SimParams, StepOutcome

from . import settings

logger = logging.getLogger(__name__)


@dataclass
class ExperimentConfig:
    """
    Experiment protocol.

    Attributes
    ----------
    mode : str
        One of `settings.modes`.
    controller : str
        One of `settings.controllers`.
    ep_train, ep_val, ep_test : int
        Number of training, validation and test episodes.
    epochs : int
        Passes over the training episodes.
    steps_per_episode : int
        Steps (TTIs) per episode.
    tti : float
        TTI in seconds.
    seed : int
        Root seed of scenarios, channels, traffic and the agent.
    scenario_count : Union[None, int]
        Scenarios the episodes cycle through; None draws one scenario per
        episode.
    scenario_ids : Union[None, list[int]]
        Explicit scenario identifiers, overriding `scenario_count`.
    base_checkpoint : Union[None, str]
        Initial policy parameters of a fine-tuning run.
    validation_interval : int
        Training episodes between validation sweeps.
    max_env_steps : Union[None, int]
        Training stops before exceeding this many environment steps.
    workers : int
        Processes running evaluation episodes.
    """

    mode: str = "single-scenario"
    controller: str = "proposed"
    ep_train: int = 60
    ep_val: int = 20
    ep_test: int = 20
    epochs: int = 10
    steps_per_episode: int = settings.steps_per_episode
    tti: float = settings.tti
    seed: int = 0
    scenario_count: Union[None, int] = 1
    scenario_ids: Union[None, list] = None
    base_checkpoint: Union[None, str] = None
    validation_interval: int = settings.validation_interval
    max_env_steps: Union[None, int] = None
    workers: int = 1

    @classmethod
    def preset(
        cls, mode: str, scale: str = "full", **overrides
    ) -> "ExperimentConfig":
        """Protocol preset at full or desk scale."""
        scale_presets = settings.presets.get(scale, {})
        if mode not in scale_presets:
            raise ConfigError(f"no {scale} preset for mode '{mode}'")
        splits, epochs, scenarios = scale_presets[mode]
        config = cls(
            mode=mode,
            ep_train=splits[0],
            ep_val=splits[1],
            ep_test=splits[2],
            epochs=epochs,
            scenario_count=scenarios,
        )
        return replace(config, **overrides)

    @property
    def train_steps(self) -> int:
        """Environment steps scheduled for training."""
        return self.ep_train * self.steps_per_episode * self.epochs

    def validate(self) -> None:
        """Raise `ConfigError` unless the configuration is consistent."""
        if self.mode not in settings.modes:
            raise ConfigError(f"unknown mode '{self.mode}'")
        if self.controller not in settings.controllers:
            raise ConfigError(f"unknown controller '{self.controller}'")
        for name in ("ep_train", "ep_val", "ep_test", "epochs"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.steps_per_episode < 1:
            raise ConfigError("steps_per_episode must be >= 1")
        if self.validation_interval < 1 or self.workers < 1:
            raise ConfigError("validation_interval and workers must be >= 1")
        if self.scenario_count is not None and self.scenario_count < 1:
            raise ConfigError("scenario_count must be >= 1")
        if self.mode == "finetune" and not self.base_checkpoint:
            raise ConfigError("finetune needs a base checkpoint")
        if self.mode == "overfit" and not (
            self.ep_train == self.ep_val == self.ep_test
        ):
            raise ConfigError("overfit uses the same episodes for every split")


@dataclass(frozen=True)
class Episode:
    """An episode: a scenario, its channel realization and traffic seed."""

    episode_id: int
    scenario: NetworkScenario
    channel_seed: int
    traffic_seed: int


def derive_seed(seed: int, stream: int, index: int) -> int:
    state = np.random.SeedSequence([seed, stream, index]).generate_state(
        1, dtype=np.uint64
    )
    return int(state[0])


def make_episodes(
    config: ExperimentConfig,
    catalog: Sequence[SliceSpec],
    scenarios: Union[None, Sequence[NetworkScenario]] = None,
) -> tuple[list[Episode], list[Episode], list[Episode]]:
    """
    Training, validation and test episodes of a protocol.

    Splits hold distinct episodes, except that overfit runs reuse the
    training episodes for validation and testing and fine-tuning runs
    validate on their test episodes.

    Parameters
    ----------
    config : ExperimentConfig
        Protocol.
    catalog : Sequence[SliceSpec]
        Slice types scenarios are drawn from.
    scenarios : Union[None, Sequence[NetworkScenario]]
        Scenarios to cycle through instead of drawing them.
    """

    def scenario_for(episode_id: int) -> NetworkScenario:
        if scenarios:
            return scenarios[episode_id % len(scenarios)]
        if config.scenario_ids:
            sid = config.scenario_ids[episode_id % len(config.scenario_ids)]
        elif config.scenario_count is None:
            sid = episode_id
        else:
            sid = episode_id % config.scenario_count
        seed = scenario_seed(config.seed, sid)
        return scenario_from_seed(sid, seed, catalog)

    def episode(episode_id: int) -> Episode:
        return Episode(
            episode_id=episode_id,
            scenario=scenario_for(episode_id),
            channel_seed=derive_seed(config.seed, 1, episode_id),
            traffic_seed=derive_seed(config.seed, 2, episode_id),
        )

    train = [episode(e) for e in range(config.ep_train)]
    if config.mode == "overfit":
        return train, list(train), list(train)
    start = config.ep_train
    val = [episode(start + e) for e in range(config.ep_val)]
    if config.mode == "finetune":
        return train, val, list(val)
    start += config.ep_val
    test = [episode(start + e) for e in range(config.ep_test)]
    return train, val, test


def generate_grid(
    episode: Episode,
    channel_params: Union[None, ChannelParams] = None,
    steps: int = settings.steps_per_episode,
    tti: float = settings.tti,
) -> SEGrid:
    """SE grid of an episode, a function of its scenario and channel
    seed."""
    params = channel_params or ChannelParams()
    rng = np.random.default_rng(episode.channel_seed)
    trajectories = simulate_mobility(episode.scenario, rng, steps, tti)
    grid = generate_se_grid(trajectories, params, rng)
    grid.metadata = {
        "scenario_id": episode.scenario.scenario_id,
        "seed": episode.channel_seed,
        "params": params_metadata(params),
    }
    return grid


@dataclass
class GridCache:
    """
    SE grids of the episodes generated so far, optionally saved as trace
    files under `directory`.
    """

    channel_params: ChannelParams = field(default_factory=ChannelParams)
    directory: Union[None, str] = None
    grids: dict = field(default_factory=dict)

    def get(self, episode: Episode, steps: int, tti: float) -> SEGrid:
        key = (episode.scenario.seed, episode.channel_seed, steps)
        if key not in self.grids:
            grid = generate_grid(episode, self.channel_params, steps, tti)
            if self.directory:
                os.makedirs(self.directory, exist_ok=True)
                save_se_grid(
                    grid,
                    os.path.join(
                        self.directory, f"episode_{episode.episode_id}.grid"
                    ),
                )
            self.grids[key] = grid
        return self.grids[key]


def step_distance(outcome: StepOutcome) -> tuple[float, float, float, float]:
    """
    Normalized distance to fulfill and violation share of one step.

    Returns
    -------
    tuple[float, float, float, float]
        ``(distance_total, distance_hp, violations_total, violations_hp)``;
        totals are divided by the active slice count and high-priority
        figures by the high-priority slice count (0 without such slices).
        Unfulfilled high-priority slices carry the -1 offset of the
        inter-slice reward in both distances.
    """
    scenario = outcome.view.scenario
    drifts = outcome.drifts
    hp = {s.index: s.spec.high_priority for s in scenario.slices}
    rewards = {i: intra_reward(d) for i, d in drifts.items()}
    n_act = len(scenario.slices)
    n_hp = scenario.hp_count

    distance_total = 0.0
    if cv(drifts.values()) < 0:
        distance_total = inter_reward(rewards, drifts, hp) / n_act

    distance_hp = 0.0
    hp_unfulfilled = [i for i, d in drifts.items() if hp[i] and d.violated]
    if n_hp and hp_unfulfilled:
        distance_hp = np.mean([rewards[i] for i in hp_unfulfilled]) - 1
        distance_hp = float(distance_hp) / n_hp

    violated = [i for i, ok in outcome.fulfilled.items() if not ok]
    violations_total = len(violated) / n_act
    violations_hp = sum(hp[i] for i in violated) / n_hp if n_hp else 0.0
    return distance_total, distance_hp, violations_total, violations_hp


def run_episode(
    episode: Episode,
    controller: Controller,
    grid: SEGrid,
    config: ExperimentConfig,
    sim_params: Union[None, SimParams] = None,
    record: bool = False,
) -> RunData:
    """
    Run one episode of `controller`.

    Returns
    -------
    RunData
        Per-step reward, distance and violation rows (`settings.step_columns`);
        with `record`, the simulator's per-UE metrics log is in
        ``metadata["metrics"]``.
    """
    params = sim_params or SimParams(tti=config.tti)
    sim = NetworkSimulator(
        episode.scenario,
        grid,
        params,
        traffic_seed=episode.traffic_seed,
        steps=config.steps_per_episode,
        record=record,
    )
    view = sim.reset()
    controller.reset(view)
    rows = []
    done = False
    while not done:
        allocation = controller.allocate(view)
        outcome = sim.step(allocation)
        reward = controller.observe(outcome)
        rows.append(
            (episode.episode_id, controller.name, outcome.step, reward)
            + step_distance(outcome)
        )
        view = outcome.view
        done = outcome.done

    metadata = {
        "episode": episode.episode_id,
        "scenario_id": episode.scenario.scenario_id,
        "controller": controller.name,
    }
    if record:
        metadata["metrics"] = sim.metrics_frame()
    return RunData(metadata, pd.DataFrame(rows, columns=settings.step_columns))


def make_controller(
    name: str,
    ppo_config: Union[None, PPOConfig] = None,
    seed: int = 0,
    training: bool = False,
) -> Controller:
    """Controller registered under `name` (see `settings.controllers`)."""
    if name == "marr":
        return MarrController()
    if name == "mapf":
        return MapfController()
    learners = {
        "proposed": MarlController,
        "intent_aware": IntentAwareController,
        "sched_slicing": SchedSlicingController,
    }
    if name not in learners:
        raise ConfigError(f"unknown controller '{name}'")
    return learners[name](ppo_config, seed=seed, training=training)


def _evaluate_episode(
    controller: Controller,
    config: ExperimentConfig,
    channel_params: ChannelParams,
    sim_params: Union[None, SimParams],
    record: bool,
    episode: Episode,
) -> RunData:
    grid = generate_grid(
        episode, channel_params, config.steps_per_episode, config.tti
    )
    return run_episode(episode, controller, grid, config, sim_params, record)


def evaluate(
    controller: Controller,
    episodes: Sequence[Episode],
    config: ExperimentConfig,
    cache: Union[None, GridCache] = None,
    sim_params: Union[None, SimParams] = None,
    record: bool = False,
) -> RunData:
    """
    Run `controller` deterministically on `episodes`.

    With ``config.workers > 1`` the episodes run in worker processes, each
    on its own copy of the controller.

    Returns
    -------
    RunData
        Concatenated per-step rows of all episodes.
    """
    cache = cache or GridCache()
    training = getattr(controller, "training", False)
    if isinstance(controller, PpoController):
        controller.training = False
    try:
        if config.workers > 1 and len(episodes) > 1:
            task = partial(
                _evaluate_episode,
                controller,
                config,
                cache.channel_params,
                sim_params,
                record,
            )
            with ProcessPoolExecutor(max_workers=config.workers) as pool:
                runs = list(pool.map(task, episodes))
        else:
            runs = [
                run_episode(
                    ep,
                    controller,
                    cache.get(ep, config.steps_per_episode, config.tti),
                    config,
                    sim_params,
                    record,
                )
                for ep in episodes
            ]
    finally:
        if isinstance(controller, PpoController):
            controller.training = training

    frame = pd.concat([r.data for r in runs], ignore_index=True)
    metadata = {
        "controller": controller.name,
        "episodes": [ep.episode_id for ep in episodes],
    }
    if record:
        metadata["metrics"] = {
            r.metadata["episode"]: r.metadata["metrics"] for r in runs
        }
    return RunData(metadata, frame)


@dataclass
class TrainResult:
    controller: PpoController
    curve: RunData
    updates: RunData
    best_reward: float
    env_steps: int


def train(
    config: ExperimentConfig,
    catalog: Sequence[SliceSpec],
    ppo_config: Union[None, PPOConfig] = None,
    cache: Union[None, GridCache] = None,
    scenarios: Union[None, Sequence[NetworkScenario]] = None,
    controller: Union[None, PpoController] = None,
    output_dir: Union[None, str] = None,
) -> TrainResult:
    """
    Train a learning controller under a protocol.

    Every `config.validation_interval` training episodes the controller
    runs all validation episodes deterministically; the parameters of the
    best mean validation reward are restored at the end. A base checkpoint
    in the configuration initializes the policies.

    Parameters
    ----------
    config : ExperimentConfig
        Protocol; `config.controller` must be a learning controller.
    catalog : Sequence[SliceSpec]
        Slice types.
    ppo_config : Union[None, PPOConfig]
        PPO hyper-parameters.
    cache : Union[None, GridCache]
        SE grid cache and channel parameters.
    scenarios : Union[None, Sequence[NetworkScenario]]
        Scenarios to use instead of drawing them.
    controller : Union[None, PpoController]
        Controller to train; built from the configuration if None.
    output_dir : Union[None, str]
        Directory receiving the best checkpoint, the training curve and
        the PPO update log.

    Returns
    -------
    TrainResult
    """
    config.validate()
    if config.controller not in settings.learning_controllers:
        raise ConfigError(f"'{config.controller}' does not learn")
    cache = cache or GridCache()
    if controller is None:
        controller = make_controller(
            config.controller, ppo_config, config.seed, training=True
        )
    if config.base_checkpoint:
        controller.load(config.base_checkpoint)
        logger.info("initialized from %s", config.base_checkpoint)

    train_eps, val_eps, _ = make_episodes(config, catalog, scenarios)
    rows = []
    best_reward = -np.inf
    best_state = controller.state()
    env_steps = 0
    episodes_run = 0

    def validate(epoch: int) -> None:
        nonlocal best_reward, best_state
        if not val_eps:
            return
        run = evaluate(controller, val_eps, config, cache)
        reward = float(run.data.groupby("episode")["reward"].mean().mean())
        rows.append((epoch, episodes_run, env_steps, "validation", reward))
        logger.info(
            "validation after %d episodes: mean reward %.4f",
            episodes_run,
            reward,
        )
        if reward > best_reward:
            best_reward = reward
            best_state = controller.state()
            logger.info("new best validation reward %.4f", reward)

    def write_logs() -> tuple[RunData, RunData]:
        curve = RunData(
            {"controller": controller.name, "mode": config.mode},
            pd.DataFrame(rows, columns=settings.curve_columns),
        )
        updates = RunData(
            {"controller": controller.name},
            pd.DataFrame(
                controller.updates, columns=agent_settings.update_log_columns
            ),
        )
        if output_dir:
            curve.write(output_dir, "training_curve")
            updates.write(output_dir, "updates")
        return curve, updates

    try:
        stop = False
        for epoch in range(config.epochs):
            for ep in train_eps:
                if (
                    config.max_env_steps is not None
                    and env_steps + config.steps_per_episode
                    > config.max_env_steps
                ):
                    logger.warning(
                        "step budget of %d reached", config.max_env_steps
                    )
                    stop = True
                    break
                controller.training = True
                grid = cache.get(ep, config.steps_per_episode, config.tti)
                run = run_episode(ep, controller, grid, config)
                env_steps += config.steps_per_episode
                episodes_run += 1
                rows.append(
                    (
                        epoch,
                        episodes_run,
                        env_steps,
                        "train",
                        float(run.data["reward"].mean()),
                    )
                )
                if episodes_run % config.validation_interval == 0:
                    validate(epoch)
            if stop:
                break
        if not any(r[3] == "validation" for r in rows):
            validate(max(config.epochs - 1, 0))
    except NonFiniteLossError as e:
        logger.warning("training aborted: %s %s", e, e.diagnostic)
        write_logs()
        raise

    controller.restore(best_state)
    controller.training = False
    curve, updates = write_logs()
    if output_dir:
        controller.save(os.path.join(output_dir, "checkpoint.bin"))
    return TrainResult(controller, curve, updates, best_reward, env_steps)


def finetune(
    config: ExperimentConfig,
    catalog: Sequence[SliceSpec],
    **kwargs,
) -> TrainResult:
    """`train()` starting from ``config.base_checkpoint``."""
    if not config.base_checkpoint:
        raise ConfigError("finetune needs a base checkpoint")
    return train(config, catalog, **kwargs)


def ue_packet_demand(spec: SliceSpec, tti: float = settings.tti) -> int:
    """
    Whole packets one UE must be able to send in a TTI to carry its mean
    traffic and, when it has one, its throughput requirement.
    """
    if spec.traffic_mean <= 0:
        return 0
    rate = max(spec.traffic_mean, spec.thr_req or 0.0)
    return math.ceil(round(rate * 1e6 * tti / spec.packet_size, 9))


def demand_analysis(
    scenario: NetworkScenario,
    grid: SEGrid,
    sim_params: Union[None, SimParams] = None,
) -> RunData:
    """
    RBs needed per step to carry the requested traffic.

    Every UE needs the RBs that carry `ue_packet_demand` whole packets in
    one TTI, evaluated at the minimum, average and maximum SE over the
    slice's UEs and RBs at that step; the needs are summed over UEs and
    slices. A UE the SE cannot serve at all counts as needing every RB.

    Returns
    -------
    RunData
        Columns `settings.demand_columns`, one row per step.
    """
    p = sim_params or SimParams()
    totals = np.zeros((grid.step_count, 3))
    for sl, r in zip(scenario.slices, scenario.ue_ranges().values()):
        bits = ue_packet_demand(sl.spec, p.tti) * sl.spec.packet_size
        if bits == 0:
            continue
        se = grid.values[:, r.start : r.stop, :].astype(float)
        stats = np.stack(
            [se.min(axis=(1, 2)), se.mean(axis=(1, 2)), se.max(axis=(1, 2))],
            axis=1,
        )
        per_rb = p.rb_bandwidth * stats * p.tti
        with np.errstate(divide="ignore"):
            need = np.ceil(np.round(bits / per_rb, 9))
        totals += sl.ue_count * np.minimum(need, p.rb_count)
    frame = pd.DataFrame(
        {
            "step": np.arange(grid.step_count),
            "rbs_min_se": totals[:, 0],
            "rbs_avg_se": totals[:, 1],
            "rbs_max_se": totals[:, 2],
        },
        columns=settings.demand_columns,
    )
    return RunData(
        {"scenario_id": scenario.scenario_id, "rb_count": p.rb_count}, frame
    )


def classify_demand(
    demand: RunData, rb_count: int = SimParams().rb_count
) -> str:
    """``over`` if the average-SE requirement exceeds the RBs on average,
    ``under`` otherwise."""
    if demand.data["rbs_avg_se"].mean() > rb_count:
        return "over"
    return "under"


def summarize(steps: pd.DataFrame) -> pd.DataFrame:
    """Per-episode sums of the distance and violation columns."""
    metrics = settings.summary_columns[2:]
    summary = (
        steps.groupby(["episode", "controller"], sort=False)[metrics]
        .sum()
        .reset_index()
    )
    return summary[settings.summary_columns]


def aggregate(steps: pd.DataFrame) -> pd.DataFrame:
    """
    Cumulative distance and violations over the test steps of each
    controller, episodes in order.
    """
    metrics = settings.summary_columns[2:]
    ordered = steps.sort_values(
        ["controller", "episode", "step"], kind="stable"
    ).reset_index(drop=True)
    cumulative = ordered.groupby("controller", sort=False)[metrics].cumsum()
    out = pd.concat(
        [ordered[["controller", "episode", "step"]], cumulative], axis=1
    )
    return out[settings.cumulative_columns]


def compare(
    controllers: Sequence[Controller],
    episodes: Sequence[Episode],
    config: ExperimentConfig,
    cache: Union[None, GridCache] = None,
) -> RunData:
    """Evaluate several controllers on the same episodes."""
    cache = cache or GridCache()
    runs = [evaluate(c, episodes, config, cache) for c in controllers]
    return RunData(
        {"controllers": [c.name for c in controllers]},
        pd.concat([r.data for r in runs], ignore_index=True),
    )
