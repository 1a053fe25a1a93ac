"""
High-Level Supervisory Control

Observation construction at the 60 Hz decision rate, the incremental PID
controller and the velocity-increment clamping contract shared by PID and
learned policies.
"""

from dataclasses import dataclass, fields
from enum import Enum
from typing import Tuple, Union

import numpy as np
from pydantic import Field

from params import ParamsModel
from physics.world_dynamics import WorldState

HIGH_LEVEL_DT = 1.0 / 60.0

# Normalized action 1.0 corresponds to this vertical velocity increment (m/s)
ACTION_SCALE = 0.05


class VelocityConstraint(Enum):
    """Named limits on the commanded vertical velocity"""

    STRICT = "strict"
    MODERATE = "moderate"
    LOOSE = "loose"
    NONE = "none"

    @property
    def limit(self) -> float:
        return CONSTRAINT_LIMITS[self]


CONSTRAINT_LIMITS = {
    VelocityConstraint.STRICT: 0.1,
    VelocityConstraint.MODERATE: 0.3,
    VelocityConstraint.LOOSE: 0.5,
    VelocityConstraint.NONE: float("inf"),
}


def resolve_limit(value: Union[str, float, VelocityConstraint, None]) -> float:
    """Velocity limit in m/s from a constraint name, enum or number"""
    if value is None:
        return float("inf")
    if isinstance(value, VelocityConstraint):
        return value.limit
    if isinstance(value, str):
        return VelocityConstraint(value.lower()).limit
    limit = float(value)
    if not limit > 0:
        raise ValueError(f"velocity limit must be positive, got {value}")
    return limit


def constraint_name(limit: float) -> str:
    """Name of a limit when it matches a preset level, else its value"""
    for level, value in CONSTRAINT_LIMITS.items():
        if value == limit:
            return level.value
    return f"{limit:g}"


class IncPidGains(ParamsModel):
    """Gains of the incremental PID (Eq. form K_p, T_i, T_d, dt)"""

    K_p: float = Field(gt=0)
    T_i: float = Field(gt=0)
    T_d: float = Field(0.0, ge=0)
    dt: float = Field(HIGH_LEVEL_DT, gt=0)


@dataclass
class HighLevelObservation:
    """The eight controller inputs, each an (N,) array"""

    e: np.ndarray
    e_d1: np.ndarray
    e_d2: np.ndarray
    v_b: np.ndarray
    theta: np.ndarray
    omega: np.ndarray
    v_rz: np.ndarray
    last_action: np.ndarray

    def as_array(self) -> np.ndarray:
        """(N, 8) in the order [e, e', e'', v_b, theta, omega, v_rz, a]"""
        return np.stack(
            [self.e, self.e_d1, self.e_d2, self.v_b, self.theta, self.omega, self.v_rz, self.last_action],
            axis=-1,
        )

    def copy(self) -> "HighLevelObservation":
        return HighLevelObservation(**{f.name: np.array(getattr(self, f.name), copy=True) for f in fields(self)})

    def restricted(self) -> "RestrictedObservation":
        return RestrictedObservation(e=self.e, e_d1=self.e_d1, e_d2=self.e_d2)


@dataclass
class RestrictedObservation:
    """The PID-equivalent inputs (e, e', e'')"""

    e: np.ndarray
    e_d1: np.ndarray
    e_d2: np.ndarray

    def as_array(self) -> np.ndarray:
        return np.stack([self.e, self.e_d1, self.e_d2], axis=-1)


@dataclass
class ObservationHistory:
    """Errors at the previous two decision steps and the last normalized action"""

    prev_error: np.ndarray
    prev_prev_error: np.ndarray
    last_action: np.ndarray

    @classmethod
    def seeded(cls, initial_error: np.ndarray) -> "ObservationHistory":
        initial_error = np.asarray(initial_error, dtype=float)
        return cls(
            prev_error=initial_error.copy(),
            prev_prev_error=initial_error.copy(),
            last_action=np.zeros_like(initial_error),
        )

    def advance(self, error: np.ndarray, action: np.ndarray) -> "ObservationHistory":
        return ObservationHistory(
            prev_error=np.asarray(error, dtype=float).copy(),
            prev_prev_error=self.prev_error.copy(),
            last_action=np.asarray(action, dtype=float).copy(),
        )


def build_observation(world: WorldState, history: ObservationHistory, goal: float) -> HighLevelObservation:
    """Observation from the current state and the error history"""
    error = world.beam.ball_pos - goal
    e_d1 = error - history.prev_error
    e_d2 = e_d1 - (history.prev_error - history.prev_prev_error)
    return HighLevelObservation(
        e=error,
        e_d1=e_d1,
        e_d2=e_d2,
        v_b=world.beam.ball_vel.copy(),
        theta=world.beam.theta.copy(),
        omega=world.beam.omega.copy(),
        v_rz=world.drone.velocity[:, 2].copy(),
        last_action=history.last_action.copy(),
    )


def incremental_pid_step(g: IncPidGains, e, e_d1, e_d2):
    """Velocity increment (m/s) from the error and its differences"""
    return g.K_p * e_d1 + (g.K_p * g.dt / g.T_i) * e + (g.K_p * g.T_d / g.dt) * e_d2


def clamp_reference(v_z_current, delta_v, v_limit: float) -> Tuple[np.ndarray, np.ndarray]:
    """Reference vertical velocity within +-v_limit and the increment actually applied

    v_z_current is the running reference; the environment adds each increment
    to the previous clamped reference.
    """
    target = np.asarray(v_z_current, dtype=float) + np.asarray(delta_v, dtype=float)
    if np.isinf(v_limit):
        v_ref = target
    else:
        v_ref = np.clip(target, -v_limit, v_limit)
    return v_ref, v_ref - v_z_current


def to_normalized_action(delta_v):
    """Normalized action in [-1, 1] for a velocity increment in m/s"""
    return np.clip(np.asarray(delta_v, dtype=float) / ACTION_SCALE, -1.0, 1.0)


def to_velocity_increment(action):
    """Velocity increment in m/s for a normalized action (clipped to [-1, 1])"""
    return np.clip(np.asarray(action, dtype=float), -1.0, 1.0) * ACTION_SCALE


class PidController:
    """Incremental PID as a high-level controller"""

    def __init__(self, gains: IncPidGains):
        self.gains = gains

    def act(self, obs: HighLevelObservation) -> np.ndarray:
        delta_v = incremental_pid_step(self.gains, obs.e, obs.e_d1, obs.e_d2)
        return to_normalized_action(delta_v)


def observation_array(obs: HighLevelObservation, view: str = "full") -> np.ndarray:
    """(N, 8) full or (N, 3) restricted controller input"""
    if view == "full":
        return obs.as_array()
    if view == "restricted":
        return obs.restricted().as_array()
    raise ValueError(f"unknown observation view: {view}")
