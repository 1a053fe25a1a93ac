"""
Ball-Balancing Task Environment

Vectorized episode lifecycle for the tethered-beam task. One call to
``BallBeamEnv.step`` is one 60 Hz decision: the normalized action becomes a
vertical velocity increment added to the running reference, the reference is
clamped to the velocity limit, and the velocity loop runs three 180 Hz steps
of two physics substeps each.
Terminated environments are reset automatically; the pre-reset observation is
returned alongside the fresh one.
"""

import logging
from dataclasses import dataclass, field, fields
from enum import IntEnum
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import Field, model_validator

from control.supervisory_control import (
    HIGH_LEVEL_DT,
    HighLevelObservation,
    ObservationHistory,
    build_observation,
    clamp_reference,
    to_velocity_increment,
)
from faults import ConfigError
from params import ParamsModel
from physics.flight_control import (
    Se3Gains,
    VelocityCommand,
    allocate_rotors,
    track_velocity,
    update_thrust_offset,
)
from physics.world_dynamics import (
    LOW_LEVEL_DT,
    PhysicalParams,
    WorldState,
    hover_state,
    static_cable_tension,
    step_world,
)

logger = logging.getLogger(__name__)

LOW_LEVEL_STEPS_PER_DECISION = 3

SeedLike = Union[int, np.random.SeedSequence]


class RewardParams(ParamsModel):
    """Reward coefficients, failure thresholds and goal neighbourhood"""

    k1: float = Field(10.0, gt=0)
    k2: float = Field(0.1, gt=0)
    k3: float = Field(0.05, gt=0)
    k4: float = Field(0.1, gt=0)
    k5: float = Field(50.0, gt=0)
    k6: float = Field(2.0, gt=0)
    c: float = Field(5.0, gt=0)
    c_min: float = Field(1.0, gt=0)
    theta_max: float = Field(0.3, gt=0)
    e_max: float = Field(0.45, gt=0)
    e_goal: float = Field(0.05, gt=0)

    @model_validator(mode="after")
    def _check_ordering(self) -> "RewardParams":
        if not self.c > self.c_min:
            raise ValueError(f"c ({self.c}) must exceed c_min ({self.c_min})")
        if not self.e_goal < self.e_max:
            raise ValueError(f"e_goal ({self.e_goal}) must be below e_max ({self.e_max})")
        return self


class EpisodeConfig(ParamsModel):
    """Goal, episode length and initial-state distribution"""

    goal: float = Field(0.5, gt=0)
    duration: float = Field(5.0, gt=0)
    init_ball_range: Tuple[float, float] = (0.05, 0.95)
    init_exclusion: Optional[float] = Field(None, ge=0)  # half-width around the goal
    init_velocity_noise: float = Field(0.0, ge=0)
    seed: int = 0

    @model_validator(mode="after")
    def _check_range(self) -> "EpisodeConfig":
        lo, hi = self.init_ball_range
        if not 0.0 <= lo < hi:
            raise ValueError(f"init_ball_range must satisfy 0 <= low < high, got {self.init_ball_range}")
        return self

    @property
    def max_steps(self) -> int:
        return int(round(self.duration / HIGH_LEVEL_DT))

    def check_against(self, physics: PhysicalParams) -> None:
        """Raise ConfigError when the goal or init range leaves the beam"""
        length = physics.beam_length
        if not self.goal < length:
            raise ConfigError(f"goal {self.goal} must lie inside (0, {length})", key="episode.goal")
        if self.init_ball_range[1] > length:
            raise ConfigError(f"range {self.init_ball_range} exceeds beam length {length}", key="episode.init_ball_range")


class CurriculumPhase(ParamsModel):
    """Goal neighbourhood and reset exclusion for one stage of training"""

    e_goal: float = Field(gt=0)
    init_exclusion: Optional[float] = Field(None, ge=0)
    fraction: float = Field(1.0, gt=0, le=1)


class Terminal(IntEnum):
    NONE = 0
    FAILURE = 1
    TIMEOUT = 2


@dataclass
class RewardComponents:
    object: np.ndarray
    control: np.ndarray
    failure: np.ndarray
    goal: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.object + self.control + self.failure + self.goal

    def as_dict(self) -> Dict[str, np.ndarray]:
        return {"r_object": self.object, "r_control": self.control, "r_failure": self.failure, "r_goal": self.goal}


@dataclass
class StepResult:
    """Outcome of one decision for every environment"""

    observation: HighLevelObservation  # after auto-reset
    reward: np.ndarray
    components: RewardComponents
    terminal: np.ndarray  # Terminal codes
    final_observation: HighLevelObservation  # before auto-reset
    info: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def done(self) -> np.ndarray:
        return self.terminal != Terminal.NONE


def failure_mask(obs: HighLevelObservation, params: RewardParams) -> np.ndarray:
    return (np.abs(obs.theta) > params.theta_max) | (np.abs(obs.e) > params.e_max)


def reward(obs: HighLevelObservation, action, params: RewardParams) -> RewardComponents:
    """Object, control, failure and goal terms on a post-step observation"""
    e, v_b = obs.e, obs.v_b
    action = np.asarray(action, dtype=float)
    abs_e = np.abs(e)

    r_object = -params.k1 * e**2 - params.k2 * v_b**2
    r_control = -params.k3 * obs.v_rz**2 - params.k4 * action**2
    r_failure = np.where(failure_mask(obs, params), -params.k5, 0.0)
    shaped = (params.c - (params.c - params.c_min) / params.e_goal * abs_e) * np.exp(-params.k6 * np.abs(v_b))
    r_goal = np.where(abs_e < params.e_goal, shaped, 0.0)
    return RewardComponents(object=r_object, control=r_control, failure=r_failure, goal=r_goal)


def sample_ball_positions(cfg: EpisodeConfig, init_exclusion: Optional[float], rngs: Sequence[np.random.Generator]):
    """Uniform draws from the init range with the exclusion band around the goal removed"""
    lo, hi = cfg.init_ball_range
    if init_exclusion is None or init_exclusion == 0:
        segments = [(lo, hi)]
    else:
        segments = [(lo, min(hi, cfg.goal - init_exclusion)), (max(lo, cfg.goal + init_exclusion), hi)]
    segments = [(a, b) for a, b in segments if b > a]
    if not segments:
        raise ConfigError(
            f"no admissible initial ball position in {cfg.init_ball_range} outside +-{init_exclusion} of {cfg.goal}",
            key="episode.init_exclusion",
        )

    lengths = np.array([b - a for a, b in segments])
    edges = np.concatenate([[0.0], np.cumsum(lengths)])
    positions = np.empty(len(rngs))
    for i, rng in enumerate(rngs):
        u = rng.uniform(0.0, edges[-1])
        k = min(int(np.searchsorted(edges, u, side="right")) - 1, len(segments) - 1)
        positions[i] = segments[k][0] + (u - edges[k])
    return positions


def reset(
    cfg: EpisodeConfig,
    phase: CurriculumPhase,
    rngs: Sequence[np.random.Generator],
    physics: PhysicalParams,
) -> Tuple[WorldState, HighLevelObservation, ObservationHistory]:
    """Hovering start with a level beam, a taut cable and a sampled ball position"""
    ball_pos = sample_ball_positions(cfg, phase.init_exclusion, rngs)
    noise = cfg.init_velocity_noise
    if noise > 0:
        draws = np.array([rng.uniform(-noise, noise, size=2) for rng in rngs])
        world = hover_state(ball_pos, physics, ball_vel=draws[:, 0], omega=draws[:, 1])
    else:
        world = hover_state(ball_pos, physics)

    history = ObservationHistory.seeded(world.beam.ball_pos - cfg.goal)
    obs = build_observation(world, history, cfg.goal)
    return world, obs, history


class BallBeamEnv:
    """N independent ball-balancing episodes stepped together"""

    def __init__(
        self,
        seeds: Sequence[SeedLike],
        physics: PhysicalParams,
        gains: Se3Gains,
        reward_params: RewardParams,
        episode: EpisodeConfig,
        v_limit: float = float("inf"),
        phase: Optional[CurriculumPhase] = None,
    ):
        episode.check_against(physics)
        self.physics = physics
        self.gains = gains
        self.episode = episode
        self.v_limit = v_limit
        self.base_reward = reward_params
        self.rngs: List[np.random.Generator] = [np.random.default_rng(s) for s in seeds]
        self.set_phase(phase if phase is not None else CurriculumPhase(e_goal=reward_params.e_goal, init_exclusion=episode.init_exclusion))

        world, obs, history = reset(episode, self.phase, self.rngs, physics)
        self.world = world
        self.history = history
        self.observation = obs
        self.thrust_offset = self._seed_offset(world)
        self.lateral_anchor = world.drone.position[:, :2].copy()
        self.v_ref_z = self._seed_reference(world)
        self.attitude_target = world.drone.attitude.copy()
        self.steps = np.zeros(self.n_envs, dtype=int)

    @property
    def n_envs(self) -> int:
        return len(self.rngs)

    def set_phase(self, phase: CurriculumPhase) -> None:
        """Switch goal neighbourhood and reset exclusion; applies to later resets"""
        self.phase = phase
        self.reward_params = self.base_reward.model_copy(update={"e_goal": phase.e_goal})
        if not self.reward_params.e_goal < self.reward_params.e_max:
            raise ConfigError(f"phase e_goal {phase.e_goal} must be below e_max", key="train.curriculum")

    def _seed_offset(self, world: WorldState) -> np.ndarray:
        if not self.physics.cable_enabled:
            return np.zeros(world.n_envs)
        return static_cable_tension(world.beam.ball_pos, self.physics)

    def _seed_reference(self, world: WorldState) -> np.ndarray:
        v_z = world.drone.velocity[:, 2]
        if np.isinf(self.v_limit):
            return v_z.copy()
        return np.clip(v_z, -self.v_limit, self.v_limit)

    def reset_envs(self, mask: np.ndarray) -> None:
        """Start new episodes in the masked environments"""
        index = np.flatnonzero(mask)
        if index.size == 0:
            return
        world, obs, history = reset(self.episode, self.phase, [self.rngs[i] for i in index], self.physics)
        self.world.assign(index, world)
        for name in ("prev_error", "prev_prev_error", "last_action"):
            getattr(self.history, name)[index] = getattr(history, name)
        self.thrust_offset[index] = self._seed_offset(world)
        self.lateral_anchor[index] = world.drone.position[:, :2]
        self.v_ref_z[index] = self._seed_reference(world)
        self.attitude_target[index] = world.drone.attitude
        self.steps[index] = 0
        fresh = build_observation(world, history, self.episode.goal)
        for f in fields(fresh):
            getattr(self.observation, f.name)[index] = getattr(fresh, f.name)

    def step(self, action) -> StepResult:
        """Advance one decision period"""
        action = np.clip(np.asarray(action, dtype=float).reshape(self.n_envs), -1.0, 1.0)
        world = self.world
        # Increments accumulate on the previous reference, not the measured velocity
        v_ref_z, applied = clamp_reference(self.v_ref_z, to_velocity_increment(action), self.v_limit)

        v_ref = np.zeros((self.n_envs, 3))
        v_ref[:, 2] = v_ref_z
        yaw_ref = np.zeros(self.n_envs)
        rotor_saturated = np.zeros(self.n_envs, dtype=bool)
        offset = self.thrust_offset
        target = self.attitude_target

        for _ in range(LOW_LEVEL_STEPS_PER_DECISION):
            cmd = VelocityCommand(v_ref=v_ref, yaw_ref=yaw_ref, lateral_anchor=self.lateral_anchor, thrust_offset=offset)
            wrench, target = track_velocity(world.drone, cmd, self.gains, self.physics, fallback_attitude=target)
            thrusts, realized = allocate_rotors(wrench, self.physics)
            rotor_saturated |= np.any((thrusts <= 0.0) | (thrusts >= self.physics.rotor_thrust_max), axis=1)
            for _ in range(self.physics.substeps_per_control):
                world = step_world(world, realized, self.physics)
            offset = update_thrust_offset(offset, world.drone.velocity[:, 2], v_ref_z, self.gains, LOW_LEVEL_DT)

        self.world = world
        self.thrust_offset = offset
        self.attitude_target = target
        self.v_ref_z = v_ref_z.copy()
        self.steps += 1

        taken = ObservationHistory(self.history.prev_error, self.history.prev_prev_error, action)
        final_obs = build_observation(world, taken, self.episode.goal)
        self.history = self.history.advance(final_obs.e, action)
        components = reward(final_obs, action, self.reward_params)

        failed = failure_mask(final_obs, self.reward_params) | ~world.ball_on_beam
        timed_out = self.steps >= self.episode.max_steps
        terminal = np.where(failed, Terminal.FAILURE, np.where(timed_out, Terminal.TIMEOUT, Terminal.NONE))

        info = {
            "time": world.time.copy(),
            "ball_pos": world.beam.ball_pos.copy(),
            "v_ref_z": v_ref_z,
            "delta_v": applied,
            "reference_clamped": np.abs(applied - to_velocity_increment(action)) > 1e-12,
            "rotor_saturated": rotor_saturated,
            "ball_on_beam": world.ball_on_beam.copy(),
        }

        self.observation = final_obs.copy()
        self.reset_envs(terminal != Terminal.NONE)

        return StepResult(
            observation=self.observation,
            reward=components.total,
            components=components,
            terminal=terminal,
            final_observation=final_obs,
            info=info,
        )
