#!/usr/bin/env python3
"""
Ball-Balancing Lab

Command-line entry point: train policies, evaluate and compare controllers,
run a smoke test of the whole pipeline and grid-search PID presets.

    python src/ball_beam_lab.py train experiments/table1.yaml
    python src/ball_beam_lab.py eval experiments/table1.yaml --controller pid:strict
    python src/ball_beam_lab.py compare experiments/table1.yaml --episodes 1000 --duration 10
    python src/ball_beam_lab.py smoke experiments/smoke.yaml
    python src/ball_beam_lab.py tune-pid experiments/table1.yaml --level loose

Exit status: 0 success, 1 invalid configuration, 2 runtime fault.
"""

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from dotenv import load_dotenv
from rich.console import Console
from rich.table import Table

from evaluation.reporting import (
    MetricsReport,
    compare_report,
    controller_slug,
    export_traces,
    render_report,
    write_report_csv,
)
from evaluation.runner import (
    SimulationSetup,
    episode_seeds,
    evaluate_resolved,
    parse_controller_spec,
    resolve_controller,
    tune_pid,
    worker_count,
)
from experiment_config import ExperimentConfig, apply_overrides, config_hash, parse_config
from faults import ConfigError, LabError
from learning.checkpoint import load_checkpoint
from learning.rpo_trainer import train_seeds
from log_setup import configure_logging

logger = logging.getLogger("ball_beam_lab")

SMOKE_EPISODES = 16


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    """Config file, then BALLBEAM_OUTPUT_DIR, then --set/--episodes/--duration"""
    config = parse_config(args.config)
    overrides: List[str] = []
    if os.getenv("BALLBEAM_OUTPUT_DIR"):
        overrides.append(f"output_dir={os.environ['BALLBEAM_OUTPUT_DIR']}")
    overrides.extend(args.set or [])
    if getattr(args, "episodes", None) is not None:
        overrides.append(f"eval.episodes={args.episodes}")
    if getattr(args, "duration", None) is not None:
        overrides.append(f"eval.duration={args.duration}")
    return apply_overrides(config, overrides) if overrides else config


def cmd_train(config: ExperimentConfig, resume: bool = False) -> List[Path]:
    digest = config_hash(config)
    finals = train_seeds(
        config.train,
        config.physics,
        config.gains,
        config.reward,
        config.episode,
        config.run_dir,
        config.seeds,
        config_hash=digest,
        resume=resume,
    )
    for path in finals:
        logger.info(f"Final checkpoint {path}")
    return finals


def run_roster(config: ExperimentConfig, roster: Sequence[str], out_dir: Path) -> MetricsReport:
    """Evaluate every controller on the same episode seeds and write report + traces"""
    digest = config_hash(config)
    setup = SimulationSetup.for_evaluation(config)
    seeds = episode_seeds(config.eval.seed, config.eval.episodes)
    workers = worker_count()

    resolved = [resolve_controller(parse_controller_spec(spec), config) for spec in roster]
    runs: Dict[str, Dict[int, list]] = {}
    for controller in resolved:
        traces_by_seed = evaluate_resolved(controller, setup, seeds, workers)
        runs[controller.label] = traces_by_seed
        first_seed = min(traces_by_seed)
        export_traces(
            controller.label,
            traces_by_seed[first_seed],
            out_dir / "traces",
            config.eval.trace_samples,
            digest,
            [config.eval.seed],
        )

    report = compare_report(runs, config_hash=digest, episode_seed=config.eval.seed)
    write_report_csv(report, out_dir / "report.csv")
    render_report(report)
    return report


def cmd_eval(config: ExperimentConfig, controller: str) -> MetricsReport:
    return run_roster(config, [controller], config.run_dir / "eval" / controller_slug(controller))


def cmd_compare(config: ExperimentConfig) -> MetricsReport:
    if not config.compare:
        raise ConfigError("compare roster must list at least one controller", key="compare")
    return run_roster(config, config.compare, config.run_dir / "compare")


def cmd_smoke(config: ExperimentConfig) -> MetricsReport:
    """Train, reload every checkpoint, then compare on a handful of episodes"""
    for path in cmd_train(config):
        ckpt = load_checkpoint(path)
        logger.info(f"Smoke: {path} loads ({ckpt.actor_input} actor, step {ckpt.global_step})")
    quick = apply_overrides(config, [f"eval.episodes={min(config.eval.episodes, SMOKE_EPISODES)}"])
    return cmd_compare(quick)


def cmd_tune_pid(config: ExperimentConfig, level: str, episodes: int) -> None:
    gains, results = tune_pid(config, level, episodes=episodes, workers=worker_count())
    table = Table(title=f"PID grid search ({level})")
    for column in ("K_p", "T_i", "T_d", "failures", "SR", "CONT_s"):
        table.add_column(column, justify="right")
    for row in sorted(results, key=lambda r: (r["failures"], r["CONT_s"])):
        table.add_row(*(f"{row[c]:g}" for c in ("K_p", "T_i", "T_d", "failures", "SR", "CONT_s")))
    console = Console()
    console.print(table)
    console.print(f"pid_{level}: {{K_p: {gains.K_p:g}, T_i: {gains.T_i:g}, T_d: {gains.T_d:g}}}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ball_beam_lab", description="Drone ball-balancing control lab")
    parser.add_argument("--log-level", default=None, help="overrides BALLBEAM_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", type=Path, help="experiment YAML file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
        return p

    train = add("train", "train one policy per seed")
    train.add_argument("--resume", action="store_true", help="continue from the latest periodic checkpoint")

    for name, help_text in (("eval", "evaluate one controller"), ("compare", "evaluate the compare roster")):
        p = add(name, help_text)
        p.add_argument("--episodes", type=int, default=None)
        p.add_argument("--duration", type=float, default=None)
        if name == "eval":
            p.add_argument("--controller", required=True, help="pid:<level> or policy[:<ckpt>,...][@<level>]")

    add("smoke", "short train + compare run of the whole pipeline")

    tune = add("tune-pid", "grid-search PID gains for one constraint level")
    tune.add_argument("--level", required=True, choices=["strict", "moderate", "loose"])
    tune.add_argument("--episodes", type=int, default=50)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)

    try:
        if args.command == "tune-pid":
            # --episodes sizes the search, not the evaluation protocol
            episodes, args.episodes = args.episodes, None
            cmd_tune_pid(load_config(args), args.level, episodes)
            return 0

        config = load_config(args)
        if args.command == "train":
            cmd_train(config, resume=args.resume)
        elif args.command == "eval":
            cmd_eval(config, args.controller)
        elif args.command == "compare":
            cmd_compare(config)
        elif args.command == "smoke":
            cmd_smoke(config)
        return 0
    except ConfigError as e:
        logger.error(f"Invalid configuration: {e}")
        return 1
    except LabError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
