import argparse
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence, Union

import pandas as pd
import yaml

from intent_rrs.agent.ppo import PPOConfig
from intent_rrs.channel.channel import (
    ChannelParams,
    load_se_grid,
    save_se_grid,
)
from intent_rrs.harness import settings as harness_settings
from intent_rrs.harness.harness import (
    Episode,
    ExperimentConfig,
    GridCache,
    aggregate,
    classify_demand,
    compare,
    demand_analysis,
    derive_seed,
    evaluate,
    finetune,
    generate_grid,
    make_controller,
    make_episodes,
    summarize,
    train,
)
from intent_rrs.intent_rrs import ConfigError, IntentRrsError, RunData
from intent_rrs.scenario.scenario import (
    load_catalog,
    scenario_from_seed,
    scenario_seed,
    write_catalog,
    write_manifest,
)

from . import settings

logger = logging.getLogger(__name__)


@dataclass
class RunConfig:
    """
    A validated run configuration.

    Attributes
    ----------
    experiment : ExperimentConfig
        Protocol and controller.
    channel : ChannelParams
        Channel generator parameters.
    ppo : PPOConfig
        PPO hyper-parameters of learning controllers.
    catalog : Union[None, str]
        Slice catalog CSV; None uses the built-in catalog.
    output_dir : str
        Root of every file the command writes.
    seed : int
        Root seed.
    workers : int
        Evaluation processes.
    """

    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    channel: ChannelParams = field(default_factory=ChannelParams)
    ppo: PPOConfig = field(default_factory=PPOConfig)
    catalog: Union[None, str] = None
    output_dir: str = settings.output_dir
    seed: int = 0
    workers: int = field(default_factory=lambda: os.cpu_count() or 1)


def _check_keys(section: str, values: dict, allowed: Sequence[str]) -> None:
    if not isinstance(values, dict):
        raise ConfigError(f"'{section}' must be a mapping")
    unknown = sorted(set(values) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown keys in '{section}': {unknown}")


def _names(cls) -> list[str]:
    return [f.name for f in fields(cls)]


def _build(cls, section: str, values: dict, **extra):
    try:
        return cls(**values, **extra)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid '{section}' section: {e}") from e


def read_config_file(path: Union[None, str]) -> dict:
    """
    Read a YAML run-config file; None gives an empty configuration.

    Raises
    ------
    FileNotFoundError
        If `path` does not exist.
    ConfigError
        If the file is not a mapping or has the wrong schema version.
    """
    if path is None:
        return {"schema_version": settings.schema_version}
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path) as src:
        try:
            doc = yaml.safe_load(src)
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: {e}") from e
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: a run config is a mapping")
    if doc.get("schema_version") != settings.schema_version:
        raise ConfigError(
            f"{path}: schema_version must be {settings.schema_version}"
        )
    return doc


def build_run_config(
    doc: dict, overrides: Union[None, dict] = None
) -> RunConfig:
    """
    Validate a run-config document and apply command-line overrides.

    Parameters
    ----------
    doc : dict
        Parsed configuration file.
    overrides : Union[None, dict]
        Values from the command line; keys are top-level keys or
        ``experiment.<field>``. None values are ignored.

    Returns
    -------
    RunConfig

    Raises
    ------
    ConfigError
        On unknown keys or invalid values.
    """
    _check_keys("config", doc, settings.config_keys)
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}

    experiment = dict(doc.get("experiment") or {})
    _check_keys(
        "experiment",
        experiment,
        _names(ExperimentConfig) + settings.experiment_extra_keys,
    )
    for key, value in overrides.items():
        if key.startswith("experiment."):
            experiment[key.split(".", 1)[1]] = value

    channel = doc.get("channel") or {}
    _check_keys("channel", channel, _names(ChannelParams))
    ppo = doc.get("ppo") or {}
    _check_keys("ppo", ppo, _names(PPOConfig))

    seed = overrides.get("seed", doc.get("seed", 0))
    if "seed" in overrides:
        experiment["seed"] = seed
    experiment.setdefault("seed", seed)
    workers = overrides.get("workers", doc.get("workers"))
    if workers is not None:
        experiment["workers"] = workers
    else:
        experiment.setdefault("workers", os.cpu_count() or 1)
    scale = experiment.pop("scale", None)
    if scale is not None:
        mode = experiment.pop("mode", "single-scenario")
        try:
            exp = ExperimentConfig.preset(mode, scale, **experiment)
        except TypeError as e:
            raise ConfigError(f"invalid 'experiment' section: {e}") from e
    else:
        exp = _build(ExperimentConfig, "experiment", experiment)
    exp.validate()

    output_dir = (
        os.environ.get(settings.output_env)
        or overrides.get("output_dir")
        or doc.get("output_dir")
        or settings.output_dir
    )
    config = RunConfig(
        experiment=exp,
        channel=_build(ChannelParams, "channel", channel),
        ppo=_build(PPOConfig, "ppo", ppo),
        catalog=overrides.get("catalog", doc.get("catalog")),
        output_dir=output_dir,
        seed=seed,
        workers=exp.workers,
    )
    for path in (config.catalog, exp.base_checkpoint):
        if path is not None and not os.path.exists(path):
            raise FileNotFoundError(path)
    return config


def _experiment_overrides(args: argparse.Namespace) -> dict:
    names = [
        "mode",
        "controller",
        "scale",
        "base_checkpoint",
        "steps_per_episode",
        "ep_train",
        "ep_val",
        "ep_test",
        "epochs",
        "max_env_steps",
    ]
    overrides = {
        f"experiment.{n}": getattr(args, n, None) for n in names
    }
    overrides.update(
        seed=getattr(args, "seed", None),
        workers=getattr(args, "workers", None),
        output_dir=getattr(args, "output_dir", None),
        catalog=getattr(args, "catalog", None),
    )
    return overrides


def load_run_config(args: argparse.Namespace, **forced) -> RunConfig:
    """Run configuration of a command: file, then flags, then `forced`."""
    overrides = _experiment_overrides(args)
    overrides.update({f"experiment.{k}": v for k, v in forced.items()})
    return build_run_config(read_config_file(args.config), overrides)


def _write_results(run: RunData, output_dir: str, prefix: str) -> None:
    run.write(output_dir, f"{prefix}_steps")
    meta = dict(run.metadata)
    RunData(meta, summarize(run.data)).write(output_dir, f"{prefix}_summary")
    RunData(meta, aggregate(run.data)).write(
        output_dir, f"{prefix}_cumulative"
    )
    logger.info("wrote %s results to %s", prefix, output_dir)


def cmd_catalog(args: argparse.Namespace) -> int:
    """Print the slice catalog or export it as CSV."""
    if args.catalog is not None and not os.path.exists(args.catalog):
        raise FileNotFoundError(args.catalog)
    catalog = load_catalog(args.catalog)
    if args.output:
        write_catalog(catalog, args.output)
        logger.info("wrote %d slice types to %s", len(catalog), args.output)
    else:
        frame = pd.DataFrame([asdict(spec) for spec in catalog])
        print(frame.to_string(index=False))
    return settings.exit_ok


def cmd_gen(args: argparse.Namespace) -> int:
    """Generate scenarios, their manifest and one SE grid per scenario."""
    config = load_run_config(args)
    if args.count < 1:
        raise ConfigError("count must be >= 1")
    catalog = load_catalog(config.catalog)
    exp = config.experiment
    scenarios = [
        scenario_from_seed(sid, scenario_seed(config.seed, sid), catalog)
        for sid in range(args.count)
    ]
    grid_dir = os.path.join(config.output_dir, "grids")
    os.makedirs(grid_dir, exist_ok=True)
    write_manifest(
        scenarios, os.path.join(config.output_dir, "scenarios.yaml")
    )
    for scenario in scenarios:
        sid = scenario.scenario_id
        episode = Episode(
            sid,
            scenario,
            derive_seed(config.seed, 1, sid),
            derive_seed(config.seed, 2, sid),
        )
        grid = generate_grid(
            episode, config.channel, exp.steps_per_episode, exp.tti
        )
        save_se_grid(grid, os.path.join(grid_dir, f"scenario_{sid}.grid"))
    logger.info("generated %d scenarios in %s", len(scenarios), grid_dir)
    return settings.exit_ok


def _train(args: argparse.Namespace, tune: bool) -> int:
    forced = {"mode": "finetune"} if tune else {}
    config = load_run_config(args, **forced)
    exp = config.experiment
    if exp.controller not in harness_settings.learning_controllers:
        raise ConfigError(f"'{exp.controller}' does not learn")
    catalog = load_catalog(config.catalog)
    cache = GridCache(config.channel)
    run = finetune if tune else train
    result = run(
        exp,
        catalog,
        ppo_config=config.ppo,
        cache=cache,
        output_dir=config.output_dir,
    )
    _, _, test = make_episodes(exp, catalog)
    if test:
        _write_results(
            evaluate(result.controller, test, exp, cache),
            config.output_dir,
            "test",
        )
    print(f"best validation reward {result.best_reward:.4f}")
    return settings.exit_ok


def cmd_train(args: argparse.Namespace) -> int:
    """Train a learning controller and evaluate it on the test episodes."""
    return _train(args, tune=False)


def cmd_finetune(args: argparse.Namespace) -> int:
    """Fine-tune a checkpoint and evaluate it on the test episodes."""
    return _train(args, tune=True)


def _controller(name: str, config: RunConfig, checkpoint: Union[None, str]):
    controller = make_controller(name, config.ppo, config.seed)
    if name in harness_settings.learning_controllers:
        if checkpoint is None:
            raise ConfigError(f"'{name}' needs a checkpoint")
        if not os.path.exists(checkpoint):
            raise FileNotFoundError(checkpoint)
        controller.load(checkpoint, optimizer_state=False)
    return controller


def cmd_eval(args: argparse.Namespace) -> int:
    """Evaluate one controller on the test episodes."""
    config = load_run_config(args)
    exp = config.experiment
    controller = _controller(exp.controller, config, args.checkpoint)
    catalog = load_catalog(config.catalog)
    _, _, test = make_episodes(exp, catalog)
    if not test:
        raise ConfigError("no test episodes")
    run = evaluate(controller, test, exp, GridCache(config.channel))
    _write_results(run, config.output_dir, f"eval_{controller.name}")
    print(summarize(run.data).to_string(index=False))
    return settings.exit_ok


def _parse_checkpoints(items: Sequence[str]) -> dict:
    checkpoints = {}
    for item in items or []:
        name, sep, path = item.partition("=")
        if not sep or not path:
            raise ConfigError(f"expected NAME=PATH, got '{item}'")
        checkpoints[name] = path
    return checkpoints


def cmd_compare(args: argparse.Namespace) -> int:
    """
    Evaluate several controllers on the same test episodes. Learning
    controllers without a checkpoint are left out.
    """
    config = load_run_config(args)
    exp = config.experiment
    checkpoints = _parse_checkpoints(args.checkpoint)
    names = args.controllers or list(harness_settings.controllers)
    unknown = set(names) - set(harness_settings.controllers)
    unknown |= set(checkpoints) - set(names)
    if unknown:
        raise ConfigError(f"unknown controllers: {sorted(unknown)}")
    selected = []
    for name in names:
        learns = name in harness_settings.learning_controllers
        if learns and name not in checkpoints:
            logger.warning("no checkpoint for '%s', skipped", name)
            continue
        selected.append(name)
    controllers = [
        _controller(n, config, checkpoints.get(n)) for n in selected
    ]
    catalog = load_catalog(config.catalog)
    _, _, test = make_episodes(exp, catalog)
    if not test:
        raise ConfigError("no test episodes")
    run = compare(controllers, test, exp, GridCache(config.channel))
    _write_results(run, config.output_dir, "compare")
    summary = summarize(run.data)
    print(
        summary.groupby("controller", sort=False)[
            harness_settings.summary_columns[2:]
        ]
        .sum()
        .to_string()
    )
    return settings.exit_ok


def cmd_demand(args: argparse.Namespace) -> int:
    """RB demand of the test episodes, or of an SE grid file."""
    config = load_run_config(args)
    exp = config.experiment
    catalog = load_catalog(config.catalog)
    _, _, test = make_episodes(exp, catalog)
    if args.grid and len(test) != 1:
        raise ConfigError("a grid file needs exactly one test episode")
    cache = GridCache(config.channel)
    rows = []
    for episode in test:
        if args.grid:
            grid = load_se_grid(args.grid)
        else:
            grid = cache.get(episode, exp.steps_per_episode, exp.tti)
        demand = demand_analysis(episode.scenario, grid)
        demand.write(config.output_dir, f"demand_{episode.episode_id}")
        rows.append(
            (
                episode.episode_id,
                episode.scenario.scenario_id,
                classify_demand(demand),
            )
        )
    print(
        pd.DataFrame(
            rows, columns=["episode", "scenario", "demand"]
        ).to_string(index=False)
    )
    return settings.exit_ok


def _add_run_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("-c", "--config", help="YAML run configuration")
    parser.add_argument("--output-dir", help="directory for all outputs")
    parser.add_argument("--catalog", help="slice catalog CSV")
    parser.add_argument("--seed", type=int, help="root seed")
    parser.add_argument("--workers", type=int, help="evaluation processes")
    parser.add_argument(
        "--mode", choices=harness_settings.modes, help="protocol"
    )
    parser.add_argument(
        "--scale",
        choices=sorted(harness_settings.presets),
        help="protocol preset scale",
    )
    parser.add_argument(
        "--controller", choices=harness_settings.controllers
    )
    parser.add_argument("--steps-per-episode", type=int)
    parser.add_argument("--ep-train", type=int)
    parser.add_argument("--ep-val", type=int)
    parser.add_argument("--ep-test", type=int)
    parser.add_argument("--epochs", type=int)


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="intent-rrs",
        description="Intent-based radio resource scheduling for RAN slicing",
    )
    parser.add_argument(
        "-v",
        "--verbose",
        action="count",
        default=0,
        help="-v for progress, -vv for debug output",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("catalog", help="print or export the slice catalog")
    p.add_argument("--catalog", help="slice catalog CSV to read")
    p.add_argument("-o", "--output", help="CSV file to write")
    p.set_defaults(func=cmd_catalog)

    p = sub.add_parser("gen", help="generate scenarios and SE grids")
    _add_run_options(p)
    p.add_argument("-n", "--count", type=int, default=1)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a learning controller")
    _add_run_options(p)
    p.add_argument("--max-env-steps", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("finetune", help="fine-tune a trained controller")
    _add_run_options(p)
    p.add_argument("--max-env-steps", type=int)
    p.add_argument(
        "--checkpoint", dest="base_checkpoint", help="base checkpoint"
    )
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", help="evaluate one controller")
    _add_run_options(p)
    p.add_argument("--checkpoint", help="checkpoint of a learning controller")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="evaluate several controllers")
    _add_run_options(p)
    p.add_argument(
        "--controllers", nargs="+", help="controllers to compare"
    )
    p.add_argument(
        "--checkpoint",
        action="append",
        metavar="NAME=PATH",
        help="checkpoint of a learning controller",
    )
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("demand", help="RB demand of the test episodes")
    _add_run_options(p)
    p.add_argument("--grid", help="SE grid file of the only test episode")
    p.set_defaults(func=cmd_demand)
    return parser


def main(argv: Union[None, Sequence[str]] = None) -> int:
    """
    Run a command and return its exit code: 0 on success, 2 on a
    configuration error or missing input file, 1 on any other failure.
    """
    args = make_parser().parse_args(argv)
    level = [logging.WARNING, logging.INFO, logging.DEBUG][
        min(args.verbose, 2)
    ]
    logging.basicConfig(level=level, format=settings.log_format)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as e:
        logger.error("%s", e)
        return settings.exit_config
    except IntentRrsError as e:
        logger.error("%s", e)
        return settings.exit_failure
    except Exception:
        logger.exception("command failed")
        return settings.exit_failure


if __name__ == "__main__":
    sys.exit(main())
