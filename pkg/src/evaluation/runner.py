"""
Episode Runner

Runs PID or policy controllers through batches of seeded evaluation episodes
and records 60 Hz traces. Controllers are named by spec strings:

- ``pid:<level>`` with level ``strict``, ``moderate`` or ``loose``
- ``policy`` for this experiment's trained ``final.npz`` checkpoints
- ``policy:<ckpt>[,<ckpt>...][@<level>]`` for explicit checkpoints; the
  constraint defaults to the one each checkpoint was trained with
"""

import itertools
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np

from control.supervisory_control import (
    HighLevelObservation,
    IncPidGains,
    PidController,
    constraint_name,
    observation_array,
    resolve_limit,
)
from evaluation.metrics import EpisodeTrace, convergence_time, failure_count, success_rate
from experiment_config import PID_LEVELS, ExperimentConfig
from faults import ConfigError
from learning.checkpoint import load_checkpoint
from learning.policy_net import MlpParams, actor_forward
from physics.flight_control import Se3Gains
from physics.world_dynamics import PhysicalParams
from task_env import BallBeamEnv, CurriculumPhase, EpisodeConfig, RewardParams, SeedLike, Terminal

logger = logging.getLogger(__name__)

DEFAULT_TUNING_GRID = {
    "K_p": (25.0, 50.0, 100.0),
    "T_i": (0.6, 0.8, 1.2, 2.0),
    "T_d": (0.4, 0.6, 0.8, 1.2),
}


class Controller(Protocol):
    def act(self, obs: HighLevelObservation) -> np.ndarray: ...


class PolicyController:
    """Deterministic actor: the action is the network mean"""

    def __init__(self, actor: MlpParams, actor_input: str = "full"):
        self.actor = actor
        self.actor_input = actor_input

    def act(self, obs: HighLevelObservation) -> np.ndarray:
        return actor_forward(self.actor, observation_array(obs, self.actor_input))


@dataclass(frozen=True)
class SimulationSetup:
    physics: PhysicalParams
    gains: Se3Gains
    reward: RewardParams
    episode: EpisodeConfig

    @classmethod
    def for_evaluation(cls, config: ExperimentConfig) -> "SimulationSetup":
        return cls(config.physics, config.gains, config.reward, config.eval_episode())


@dataclass
class ControllerSpec:
    text: str
    kind: str
    level: Optional[str] = None
    checkpoints: List[Path] = field(default_factory=list)


@dataclass
class ResolvedController:
    """Controller instances keyed by the seed they represent"""

    label: str
    v_limit: float
    members: Dict[int, Controller]


def parse_controller_spec(text: str) -> ControllerSpec:
    text = text.strip()
    if text.startswith("policy"):
        kind, rest = "policy", text[len("policy") :].lstrip(":")
    else:
        kind, _, rest = text.partition(":")
    if kind == "pid":
        if rest not in PID_LEVELS:
            raise ConfigError(f"PID level must be one of {', '.join(PID_LEVELS)}, got {rest!r}", key="controller")
        return ControllerSpec(text=text, kind="pid", level=rest)
    if kind == "policy":
        body, _, level = rest.partition("@")
        if level:
            try:
                resolve_limit(level)
            except ValueError as e:
                raise ConfigError(f"bad constraint {level!r}: {e}", key="controller") from e
        checkpoints = [Path(p) for p in body.split(",") if p]
        return ControllerSpec(text=text, kind="policy", level=level or None, checkpoints=checkpoints)
    raise ConfigError(f"controller spec must start with 'pid:' or 'policy', got {text!r}", key="controller")


def resolve_controller(spec: ControllerSpec, config: ExperimentConfig) -> ResolvedController:
    if spec.kind == "pid":
        return ResolvedController(
            label=spec.text,
            v_limit=resolve_limit(spec.level),
            members={config.eval.seed: PidController(config.pid_gains(spec.level))},
        )

    paths = spec.checkpoints or [config.run_dir / f"seed{seed}" / "final.npz" for seed in config.seeds]
    members: Dict[int, Controller] = {}
    limits = set()
    for index, path in enumerate(paths):
        ckpt = load_checkpoint(path)
        seed = ckpt.seed_lineage[-1] if ckpt.seed_lineage else index
        if seed in members:
            seed = max(members) + 1
        members[seed] = PolicyController(ckpt.actor, ckpt.actor_input)
        limits.add(ckpt.v_limit)

    if spec.level is not None:
        v_limit = resolve_limit(spec.level)
    elif len(limits) == 1:
        v_limit = limits.pop()
    else:
        raise ConfigError(f"checkpoints were trained under different limits {sorted(limits)}; add @<level>", key="controller")
    label = spec.text if spec.checkpoints else f"policy@{constraint_name(v_limit)}"
    return ResolvedController(label=label, v_limit=v_limit, members=members)


def episode_seeds(base_seed: int, count: int) -> List[np.random.SeedSequence]:
    """Independent per-episode seeds shared by every controller"""
    return np.random.SeedSequence(base_seed).spawn(count)


def run_episodes(
    controller: Controller,
    v_limit: float,
    setup: SimulationSetup,
    seeds: Sequence[SeedLike],
) -> List[EpisodeTrace]:
    """One trace per seed, stepped as a single vectorized batch"""
    env = BallBeamEnv(
        seeds=seeds,
        physics=setup.physics,
        gains=setup.gains,
        reward_params=setup.reward,
        episode=setup.episode,
        v_limit=v_limit,
        phase=CurriculumPhase(e_goal=setup.reward.e_goal, init_exclusion=setup.episode.init_exclusion),
    )
    n, max_steps = env.n_envs, setup.episode.max_steps
    names = ("e", "p_b", "v_b", "theta", "omega", "v_rz", "delta_v", "r_object", "r_control", "r_failure", "r_goal")
    columns = {name: np.zeros((max_steps, n)) for name in names}
    lengths = np.full(n, max_steps)
    terminal = np.full(n, int(Terminal.TIMEOUT))
    final_error = np.zeros(n)
    active = np.ones(n, dtype=bool)

    for k in range(max_steps):
        obs = env.observation
        columns["e"][k] = obs.e
        columns["p_b"][k] = obs.e + setup.episode.goal
        columns["v_b"][k] = obs.v_b
        columns["theta"][k] = obs.theta
        columns["omega"][k] = obs.omega
        columns["v_rz"][k] = obs.v_rz

        result = env.step(controller.act(obs))
        columns["delta_v"][k] = result.info["delta_v"]
        for name, values in result.components.as_dict().items():
            columns[name][k] = values

        ended = active & result.done
        lengths[ended] = k + 1
        terminal[ended] = result.terminal[ended]
        final_error[ended] = result.final_observation.e[ended]
        active &= ~result.done
        if not active.any():
            break

    time = np.arange(max_steps) / 60.0
    traces = []
    for i in range(n):
        length = lengths[i]
        traces.append(
            EpisodeTrace(
                time=time[:length].copy(),
                **{name: columns[name][:length, i].copy() for name in names},
                duration=setup.episode.duration,
                terminal=Terminal(terminal[i]),
                final_error=float(final_error[i]),
            )
        )
    return traces


def run_episode(controller: Controller, v_limit: float, setup: SimulationSetup, seed: SeedLike) -> EpisodeTrace:
    return run_episodes(controller, v_limit, setup, [seed])[0]


def worker_count() -> int:
    """Evaluation worker processes from BALLBEAM_THREADS (default 1)"""
    try:
        return max(1, int(os.getenv("BALLBEAM_THREADS", "1")))
    except ValueError:
        raise ConfigError(f"BALLBEAM_THREADS must be an integer, got {os.getenv('BALLBEAM_THREADS')!r}")


def evaluate(
    controller: Controller,
    v_limit: float,
    setup: SimulationSetup,
    seeds: Sequence[SeedLike],
    workers: int = 1,
    chunk_size: int = 250,
) -> List[EpisodeTrace]:
    """run_episodes over chunks of seeds, optionally across worker processes"""
    chunks = [list(seeds[i : i + chunk_size]) for i in range(0, len(seeds), chunk_size)]
    if workers <= 1 or len(chunks) == 1:
        return [trace for chunk in chunks for trace in run_episodes(controller, v_limit, setup, chunk)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        results = pool.map(run_episodes, *zip(*[(controller, v_limit, setup, chunk) for chunk in chunks]))
        return [trace for chunk in results for trace in chunk]


def evaluate_resolved(
    resolved: ResolvedController,
    setup: SimulationSetup,
    seeds: Sequence[SeedLike],
    workers: int = 1,
) -> Dict[int, List[EpisodeTrace]]:
    """Traces per member seed, every member on the same episode seeds"""
    out = {}
    for seed, controller in resolved.members.items():
        logger.info(f"Evaluating {resolved.label} (seed {seed}) on {len(seeds)} episodes")
        out[seed] = evaluate(controller, resolved.v_limit, setup, seeds, workers)
    return out


def tune_pid(
    config: ExperimentConfig,
    level: str,
    grid: Optional[Dict[str, Sequence[float]]] = None,
    episodes: int = 50,
    workers: int = 1,
) -> Tuple[IncPidGains, List[Dict[str, float]]]:
    """Grid search minimizing mean convergence time among failure-free gain sets"""
    grid = grid or DEFAULT_TUNING_GRID
    v_limit = resolve_limit(level)
    setup = SimulationSetup.for_evaluation(config)
    seeds = episode_seeds(config.eval.seed, episodes)

    results = []
    for k_p, t_i, t_d in itertools.product(grid["K_p"], grid["T_i"], grid["T_d"]):
        gains = IncPidGains(K_p=k_p, T_i=t_i, T_d=t_d)
        traces = evaluate(PidController(gains), v_limit, setup, seeds, workers)
        row = {
            "K_p": k_p,
            "T_i": t_i,
            "T_d": t_d,
            "failures": failure_count(traces),
            "SR": success_rate(traces),
            "CONT_s": float(np.mean([convergence_time(t) for t in traces])),
        }
        logger.info(f"tune {level}: K_p={k_p} T_i={t_i} T_d={t_d} -> {row['failures']} failures, CONT {row['CONT_s']:.2f}")
        results.append(row)

    best = min(results, key=lambda r: (r["failures"] > 0, r["failures"], r["CONT_s"], -r["SR"]))
    return IncPidGains(K_p=best["K_p"], T_i=best["T_i"], T_d=best["T_d"]), results
