"""
RPO Trainer

On-policy actor-critic training: vectorized rollouts with a perturbed-mean
Gaussian policy, generalized advantage estimation, clipped-surrogate updates
and a staged curriculum over the goal neighbourhood. The critic always sees
the full 8-dimensional observation; the actor sees either the same or the
3-dimensional error history.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import Field, field_validator, model_validator

from control.supervisory_control import observation_array, resolve_limit
from faults import CheckpointError, SimulationFault, TrainingFault
from learning.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from learning.optimizer import Adam, clip_grad_norm
from learning.policy_net import (
    FULL_WIDTH,
    HIDDEN_SIZES,
    RESTRICTED_WIDTH,
    LossDefinition,
    Minibatch,
    MlpParams,
    actor_forward,
    backward,
    critic_forward,
    init_mlp,
    sample_action,
)
from params import ParamsModel
from physics.flight_control import Se3Gains
from physics.world_dynamics import PhysicalParams
from provenance import append_csv_row, write_csv
from task_env import BallBeamEnv, CurriculumPhase, EpisodeConfig, RewardParams, Terminal

logger = logging.getLogger(__name__)

SUCCESS_THRESHOLD = 0.01

PROGRESS_COLUMNS = [
    "iteration",
    "steps",
    "phase",
    "episodes",
    "mean_return",
    "sr_proxy",
    "policy_loss",
    "value_loss",
    "entropy",
    "approx_kl",
    "clip_fraction",
    "grad_norm",
]


class CurriculumSchedule(ParamsModel):
    """Ordered training phases, each owning a fraction of the step budget"""

    phases: List[CurriculumPhase] = Field(default_factory=lambda: [CurriculumPhase(e_goal=0.05)])

    @model_validator(mode="after")
    def _check_phases(self) -> "CurriculumSchedule":
        if not self.phases:
            raise ValueError("curriculum needs at least one phase")
        total = sum(p.fraction for p in self.phases)
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"phase fractions must sum to 1, got {total}")
        goals = [p.e_goal for p in self.phases]
        if any(b >= a for a, b in zip(goals, goals[1:])):
            raise ValueError(f"e_goal must strictly decrease across phases, got {goals}")
        return self

    @classmethod
    def three_phase(cls) -> "CurriculumSchedule":
        """Wide, reduced and tight goal neighbourhoods with a far-from-goal start first"""
        third = 1.0 / 3.0
        return cls(
            phases=[
                CurriculumPhase(e_goal=0.3, init_exclusion=0.3, fraction=third),
                CurriculumPhase(e_goal=0.15, fraction=third),
                CurriculumPhase(e_goal=0.05, fraction=third),
            ]
        )


class TrainConfig(ParamsModel):
    """Hyperparameters of one training run"""

    n_envs: int = Field(256, gt=0)
    horizon: int = Field(64, gt=0)
    total_steps: int = Field(3_000_000, gt=0)
    gamma: float = Field(0.99, gt=0, le=1)
    gae_lambda: float = Field(0.95, gt=0, le=1)
    clip_eps: float = Field(0.2, gt=0, lt=1)
    epochs: int = Field(5, gt=0)
    minibatches: int = Field(8, gt=0)
    learning_rate: float = Field(3e-4, gt=0)
    value_weight: float = Field(0.5, ge=0)
    entropy_weight: float = Field(0.001, ge=0)
    rpo_alpha: float = Field(0.5, ge=0)
    max_grad_norm: float = Field(0.5, gt=0)
    adam_eps: float = Field(1e-5, gt=0)
    actor_input: Literal["full", "restricted"] = "full"
    v_limit: float = math.inf
    curriculum: CurriculumSchedule = Field(default_factory=CurriculumSchedule)
    hidden_sizes: Tuple[int, ...] = HIDDEN_SIZES
    checkpoint_every: int = Field(50, gt=0)  # iterations
    seed: int = 0

    @field_validator("v_limit", mode="before")
    @classmethod
    def _resolve_limit(cls, value):
        return resolve_limit(value)

    @model_validator(mode="after")
    def _check_batch(self) -> "TrainConfig":
        if self.minibatches > self.n_envs * self.horizon:
            raise ValueError(f"minibatches ({self.minibatches}) exceeds the batch of {self.n_envs * self.horizon}")
        return self

    @property
    def actor_width(self) -> int:
        return FULL_WIDTH if self.actor_input == "full" else RESTRICTED_WIDTH

    @property
    def steps_per_iteration(self) -> int:
        return self.n_envs * self.horizon

    def loss_definition(self) -> LossDefinition:
        return LossDefinition(
            clip_eps=self.clip_eps, value_weight=self.value_weight, entropy_weight=self.entropy_weight
        )


class UpdateStats(ParamsModel):
    """Means over every minibatch of one update"""

    policy_loss: float
    value_loss: float
    entropy: float
    total_loss: float
    approx_kl: float
    clip_fraction: float
    grad_norm: float


def curriculum_phase(global_step: int, total_steps: int, schedule: CurriculumSchedule) -> Tuple[int, CurriculumPhase]:
    """Index and parameters of the phase whose step share contains global_step"""
    progress = global_step / total_steps
    cumulative = 0.0
    for index, phase in enumerate(schedule.phases):
        cumulative += phase.fraction
        if progress < cumulative:
            return index, phase
    return len(schedule.phases) - 1, schedule.phases[-1]


@dataclass
class RolloutBuffer:
    """Time-major (T, N) storage for one iteration of experience"""

    actor_obs: np.ndarray  # (T, N, actor width)
    critic_obs: np.ndarray  # (T, N, 8)
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray  # timeout steps include the bootstrapped tail
    values: np.ndarray
    dones: np.ndarray
    bootstrap: np.ndarray  # (N,) value of the state after the last step
    advantages: Optional[np.ndarray] = None
    returns: Optional[np.ndarray] = None

    @property
    def n_transitions(self) -> int:
        return self.actions.size

    def flat(self, name: str) -> np.ndarray:
        values = getattr(self, name)
        return values.reshape(self.n_transitions, *values.shape[2:])


@dataclass
class EpisodeTally:
    """Episodes completed during one rollout"""

    returns: List[float]
    successes: int
    count: int

    @property
    def mean_return(self) -> float:
        return float(np.mean(self.returns)) if self.returns else float("nan")

    @property
    def success_rate(self) -> float:
        return self.successes / self.count if self.count else float("nan")


def collect_rollouts(
    env: BallBeamEnv,
    actor: MlpParams,
    critic: MlpParams,
    cfg: TrainConfig,
    rng: np.random.Generator,
    running_returns: np.ndarray,
) -> Tuple[RolloutBuffer, EpisodeTally]:
    """Step every environment cfg.horizon times with train-mode sampling"""
    horizon, n = cfg.horizon, env.n_envs
    actor_obs = np.zeros((horizon, n, cfg.actor_width))
    critic_obs = np.zeros((horizon, n, FULL_WIDTH))
    actions, log_probs, rewards, values = (np.zeros((horizon, n)) for _ in range(4))
    dones = np.zeros((horizon, n), dtype=bool)
    tally = EpisodeTally(returns=[], successes=0, count=0)

    for t in range(horizon):
        full = env.observation.as_array()
        bad = ~np.isfinite(full).all(axis=1)
        if np.any(bad):
            raise SimulationFault("observation", np.flatnonzero(bad).tolist())
        view = observation_array(env.observation, cfg.actor_input)

        mean = actor_forward(actor, view)
        value = critic_forward(critic, full)
        action, log_prob = sample_action(mean, actor.log_std, cfg.rpo_alpha, rng, mode="train")
        result = env.step(action)

        step_reward = result.reward.copy()
        running_returns += result.reward
        timeout = result.terminal == Terminal.TIMEOUT
        if np.any(timeout):
            tail = critic_forward(critic, result.final_observation.as_array()[timeout])
            step_reward[timeout] += cfg.gamma * tail

        done = result.done
        if np.any(done):
            final_e = np.abs(result.final_observation.e[done])
            tally.returns.extend(running_returns[done].tolist())
            tally.successes += int(np.sum(timeout[done] & (final_e < SUCCESS_THRESHOLD)))
            tally.count += int(done.sum())
            running_returns[done] = 0.0

        actor_obs[t], critic_obs[t] = view, full
        actions[t], log_probs[t], rewards[t], values[t], dones[t] = action, log_prob, step_reward, value, done

    bootstrap = critic_forward(critic, env.observation.as_array())
    buffer = RolloutBuffer(
        actor_obs=actor_obs,
        critic_obs=critic_obs,
        actions=actions,
        log_probs=log_probs,
        rewards=rewards,
        values=values,
        dones=dones,
        bootstrap=bootstrap,
    )
    return buffer, tally


def compute_gae(rewards, values, dones, bootstrap, gamma: float, lam: float) -> Tuple[np.ndarray, np.ndarray]:
    """Advantages and returns for time-major arrays; dones cut the recursion"""
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    not_done = 1.0 - np.asarray(dones, dtype=float)
    advantages = np.zeros_like(rewards)
    running = np.zeros_like(rewards[0])
    next_value = np.asarray(bootstrap, dtype=float)
    for t in range(rewards.shape[0] - 1, -1, -1):
        delta = rewards[t] + gamma * next_value * not_done[t] - values[t]
        running = delta + gamma * lam * not_done[t] * running
        advantages[t] = running
        next_value = values[t]
    return advantages, advantages + values


def normalize_advantages(advantages: np.ndarray) -> np.ndarray:
    return (advantages - advantages.mean()) / (advantages.std() + 1e-8)


def ppo_update(
    actor: MlpParams,
    critic: MlpParams,
    optimizer: Adam,
    buffer: RolloutBuffer,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> Tuple[MlpParams, MlpParams, UpdateStats]:
    """Epochs of shuffled minibatch steps; returns updated copies of both networks"""
    if buffer.advantages is None:
        raise ValueError("compute advantages before updating")
    actor, critic = actor.copy(), critic.copy()
    loss = cfg.loss_definition()

    actor_obs = buffer.flat("actor_obs")
    critic_obs = buffer.flat("critic_obs")
    actions = buffer.flat("actions")
    old_log_probs = buffer.flat("log_probs")
    advantages = normalize_advantages(buffer.flat("advantages"))
    returns = buffer.flat("returns")

    sums: Dict[str, float] = {name: 0.0 for name in UpdateStats.model_fields}
    n_steps = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(buffer.n_transitions)
        for index in np.array_split(order, cfg.minibatches):
            if cfg.rpo_alpha > 0:
                perturbation = rng.uniform(-cfg.rpo_alpha, cfg.rpo_alpha, size=index.size)
            else:
                perturbation = np.zeros(index.size)
            batch = Minibatch(
                actor_obs=actor_obs[index],
                critic_obs=critic_obs[index],
                actions=actions[index],
                old_log_probs=old_log_probs[index],
                advantages=advantages[index],
                returns=returns[index],
                perturbation=perturbation,
            )
            terms, actor_grads, critic_grads = backward(actor, critic, batch, loss)
            grads, grad_norm = clip_grad_norm(actor_grads.arrays() + critic_grads.arrays(), cfg.max_grad_norm)
            optimizer.step(actor.arrays() + critic.arrays(), grads)

            sums["policy_loss"] += terms.policy
            sums["value_loss"] += terms.value
            sums["entropy"] += terms.entropy
            sums["total_loss"] += terms.total
            sums["approx_kl"] += terms.approx_kl
            sums["clip_fraction"] += terms.clip_fraction
            sums["grad_norm"] += grad_norm
            n_steps += 1

    stats = UpdateStats(**{name: value / n_steps for name, value in sums.items()})
    return actor, critic, stats


class RpoTrainer:
    """One seeded training run writing progress.csv and checkpoints into run_dir"""

    def __init__(
        self,
        cfg: TrainConfig,
        physics: PhysicalParams,
        gains: Se3Gains,
        reward_params: RewardParams,
        episode: EpisodeConfig,
        run_dir: Union[str, Path],
        config_hash: str = "",
        resume_from: Optional[Union[str, Path]] = None,
    ):
        self.cfg = cfg
        self.run_dir = Path(run_dir)
        self.config_hash = config_hash
        self.loss = cfg.loss_definition()

        root = np.random.SeedSequence(cfg.seed)
        env_root, init_root, sample_root = root.spawn(3)
        init_rng = np.random.default_rng(init_root)
        self.actor = init_mlp(cfg.actor_width, init_rng, actor=True, hidden_sizes=cfg.hidden_sizes)
        self.critic = init_mlp(FULL_WIDTH, init_rng, actor=False, hidden_sizes=cfg.hidden_sizes)
        self.optimizer = Adam(cfg.learning_rate, eps=cfg.adam_eps)
        self.global_step = 0
        self.seed_lineage: List[int] = [cfg.seed]
        self.rng = np.random.default_rng(sample_root)

        if resume_from is not None:
            self._resume(Path(resume_from))
            # fresh sampling stream for the resumed segment
            self.rng = np.random.default_rng([cfg.seed, self.global_step])

        self.phase_index, phase = curriculum_phase(self.global_step, cfg.total_steps, cfg.curriculum)
        self.env = BallBeamEnv(
            seeds=env_root.spawn(cfg.n_envs),
            physics=physics,
            gains=gains,
            reward_params=reward_params,
            episode=episode,
            v_limit=cfg.v_limit,
            phase=phase,
        )
        self.running_returns = np.zeros(cfg.n_envs)

    def _resume(self, path: Path) -> None:
        ckpt = load_checkpoint(path)
        if ckpt.actor_input != self.cfg.actor_input or ckpt.actor.hidden_sizes != tuple(self.cfg.hidden_sizes):
            raise CheckpointError(
                f"{path} holds a {ckpt.actor_input} actor with hidden sizes {ckpt.actor.hidden_sizes}, "
                f"config expects {self.cfg.actor_input} with {tuple(self.cfg.hidden_sizes)}"
            )
        self.actor, self.critic = ckpt.actor, ckpt.critic
        if ckpt.optimizer_state:
            self.optimizer.load_state_dict(ckpt.optimizer_state)
        self.global_step = ckpt.global_step
        self.seed_lineage = list(ckpt.seed_lineage) + [self.cfg.seed]
        logger.info(f"Resumed from {path} at step {self.global_step}")

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(
            actor=self.actor,
            critic=self.critic,
            actor_input=self.cfg.actor_input,
            global_step=self.global_step,
            phase_index=self.phase_index,
            seed_lineage=self.seed_lineage,
            v_limit=self.cfg.v_limit,
            config_hash=self.config_hash,
            optimizer_state=self.optimizer.state_dict(),
        )

    def _progress_path(self) -> Path:
        path = self.run_dir / "progress.csv"
        if not path.exists() or self.global_step == 0:
            write_csv(path, PROGRESS_COLUMNS, [], self.config_hash, self.seed_lineage)
        return path

    def train(self) -> Path:
        """Run until total_steps; returns the final checkpoint path"""
        cfg = self.cfg
        self.run_dir.mkdir(parents=True, exist_ok=True)
        progress = self._progress_path()
        iteration = self.global_step // cfg.steps_per_iteration

        logger.info(
            f"Training {cfg.actor_input} actor: {cfg.n_envs} envs x {cfg.horizon} steps, "
            f"{cfg.total_steps} total, v_limit {cfg.v_limit}, seed {cfg.seed}"
        )
        while self.global_step < cfg.total_steps:
            index, phase = curriculum_phase(self.global_step, cfg.total_steps, cfg.curriculum)
            if index != self.phase_index:
                logger.info(f"Curriculum phase {index + 1}: e_goal {phase.e_goal}, exclusion {phase.init_exclusion}")
                self.phase_index = index
            if self.env.phase != phase:
                self.env.set_phase(phase)

            buffer, tally = collect_rollouts(self.env, self.actor, self.critic, cfg, self.rng, self.running_returns)
            buffer.advantages, buffer.returns = compute_gae(
                buffer.rewards, buffer.values, buffer.dones, buffer.bootstrap, cfg.gamma, cfg.gae_lambda
            )
            try:
                self.actor, self.critic, stats = ppo_update(
                    self.actor, self.critic, self.optimizer, buffer, cfg, self.rng
                )
            except TrainingFault as e:
                logger.error(f"Update aborted at step {self.global_step}: {e}")
                raise

            self.global_step += cfg.steps_per_iteration
            iteration += 1
            append_csv_row(
                progress,
                [
                    iteration,
                    self.global_step,
                    self.phase_index + 1,
                    tally.count,
                    tally.mean_return,
                    tally.success_rate,
                    stats.policy_loss,
                    stats.value_loss,
                    stats.entropy,
                    stats.approx_kl,
                    stats.clip_fraction,
                    stats.grad_norm,
                ],
            )
            logger.info(
                f"iter {iteration} step {self.global_step}: return {tally.mean_return:.2f} "
                f"sr {tally.success_rate:.2f} kl {stats.approx_kl:.4f} clip {stats.clip_fraction:.3f}"
            )
            if iteration % cfg.checkpoint_every == 0:
                save_checkpoint(self.run_dir / f"ckpt_{self.global_step:08d}.npz", self.checkpoint())

        return save_checkpoint(self.run_dir / "final.npz", self.checkpoint())


def train_seeds(
    cfg: TrainConfig,
    physics: PhysicalParams,
    gains: Se3Gains,
    reward_params: RewardParams,
    episode: EpisodeConfig,
    out_dir: Union[str, Path],
    seeds: Sequence[int],
    config_hash: str = "",
    resume: bool = False,
) -> List[Path]:
    """One run per seed in out_dir/seed<seed>/; returns the final checkpoints"""
    finals = []
    for seed in seeds:
        run_dir = Path(out_dir) / f"seed{seed}"
        resume_from = None
        if resume:
            candidates = sorted(run_dir.glob("ckpt_*.npz"))
            resume_from = candidates[-1] if candidates else None
        trainer = RpoTrainer(
            cfg.model_copy(update={"seed": seed}),
            physics,
            gains,
            reward_params,
            episode,
            run_dir,
            config_hash=config_hash,
            resume_from=resume_from,
        )
        finals.append(trainer.train())
    return finals
