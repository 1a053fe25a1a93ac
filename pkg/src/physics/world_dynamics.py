"""
Coupled Drone-Cable-Beam-Ball Dynamics

Continuous-time model of a quadrotor tethered by a unilateral spring-damper
cable to the free end of a pivoted beam carrying a rolling ball, plus the
fixed-step integrators that advance it.

All state arrays carry a leading environment axis so that many independent
worlds can be stepped in one call. Scalar helpers (ball_accel, beam_tip, ...)
broadcast over any leading shape.
"""

import logging
from dataclasses import dataclass
from typing import Literal, Optional, Tuple

import numpy as np
from pydantic import Field, model_validator

from faults import SimulationFault
from params import ParamsModel

logger = logging.getLogger(__name__)

# Low-level control period; the physics step must divide it exactly
LOW_LEVEL_DT = 1.0 / 180.0

E3 = np.array([0.0, 0.0, 1.0])


class PhysicalParams(ParamsModel):
    """Physical constants of the drone, cable, beam and ball"""

    drone_mass: float = Field(0.7, gt=0)
    drone_inertia: Tuple[float, float, float] = (0.007, 0.007, 0.012)
    arm_length: float = Field(0.17, gt=0)
    rotor_torque_coeff: float = Field(0.016, gt=0)
    rotor_thrust_max: float = Field(4.0, gt=0)

    beam_length: float = Field(1.0, gt=0)
    beam_mass: float = Field(0.2, gt=0)
    beam_inertia_pivot: Optional[float] = Field(None, gt=0)  # default M L^2 / 3
    ball_mass: float = Field(0.05, gt=0)
    ball_rolling_factor: float = Field(7.0 / 5.0, ge=1)
    pivot_position: Tuple[float, float, float] = (0.0, 0.0, 1.0)

    cable_rest_length: float = Field(0.5, gt=0)
    cable_stiffness: float = Field(500.0, gt=0)
    cable_damping: float = Field(5.0, ge=0)
    cable_enabled: bool = True

    gravity: float = Field(9.81, gt=0)
    physics_dt: float = Field(1.0 / 360.0, gt=0)
    integrator: Literal["semi_implicit_euler", "rk4"] = "semi_implicit_euler"

    @model_validator(mode="after")
    def _check_invariants(self) -> "PhysicalParams":
        if any(value <= 0 for value in self.drone_inertia):
            raise ValueError("drone_inertia entries must be strictly positive")
        ratio = LOW_LEVEL_DT / self.physics_dt
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError(
                f"physics_dt={self.physics_dt} must divide the low-level period {LOW_LEVEL_DT:.6f} s exactly"
            )
        return self

    @property
    def pivot_inertia(self) -> float:
        """Beam inertia about the pivot"""
        if self.beam_inertia_pivot is not None:
            return self.beam_inertia_pivot
        return self.beam_mass * self.beam_length**2 / 3.0

    @property
    def substeps_per_control(self) -> int:
        """Physics substeps per low-level control step"""
        return int(round(LOW_LEVEL_DT / self.physics_dt))


@dataclass
class DroneState:
    """Rigid-body state, arrays shaped (N, 3) and (N, 3, 3)"""

    position: np.ndarray
    velocity: np.ndarray
    attitude: np.ndarray  # world-from-body
    angular_velocity: np.ndarray  # body frame


@dataclass
class BeamBallState:
    """Beam angle/rate and ball arc-length coordinate/rate, arrays shaped (N,)"""

    theta: np.ndarray
    omega: np.ndarray
    ball_pos: np.ndarray
    ball_vel: np.ndarray


@dataclass
class WorldState:
    """Full state of N independent worlds"""

    drone: DroneState
    beam: BeamBallState
    time: np.ndarray
    ball_on_beam: np.ndarray

    @property
    def n_envs(self) -> int:
        return self.time.shape[0]

    def copy(self) -> "WorldState":
        return WorldState(
            drone=DroneState(*(np.array(a, copy=True) for a in _drone_fields(self.drone))),
            beam=BeamBallState(*(np.array(a, copy=True) for a in _beam_fields(self.beam))),
            time=self.time.copy(),
            ball_on_beam=self.ball_on_beam.copy(),
        )

    def select(self, index) -> "WorldState":
        """Rows of this state as a new state"""
        return WorldState(
            drone=DroneState(*(a[index] for a in _drone_fields(self.drone))),
            beam=BeamBallState(*(a[index] for a in _beam_fields(self.beam))),
            time=self.time[index],
            ball_on_beam=self.ball_on_beam[index],
        )

    def assign(self, index, other: "WorldState") -> None:
        """Overwrite rows in place with the rows of another state"""
        for dst, src in zip(_drone_fields(self.drone), _drone_fields(other.drone)):
            dst[index] = src
        for dst, src in zip(_beam_fields(self.beam), _beam_fields(other.beam)):
            dst[index] = src
        self.time[index] = other.time
        self.ball_on_beam[index] = other.ball_on_beam


@dataclass
class Wrench:
    """Collective thrust along body z (N,) and body moment (N, 3)"""

    thrust: np.ndarray
    moment: np.ndarray


def _drone_fields(drone: DroneState):
    return (drone.position, drone.velocity, drone.attitude, drone.angular_velocity)


def _beam_fields(beam: BeamBallState):
    return (beam.theta, beam.omega, beam.ball_pos, beam.ball_vel)


# --- SO(3) helpers ---------------------------------------------------------


def hat(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix of (..., 3) vectors"""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def vee(m: np.ndarray) -> np.ndarray:
    """Inverse of hat for (..., 3, 3) skew-symmetric matrices"""
    return np.stack([m[..., 2, 1], m[..., 0, 2], m[..., 1, 0]], axis=-1)


def so3_exp(phi: np.ndarray) -> np.ndarray:
    """Rodrigues exponential of (..., 3) rotation vectors"""
    angle_sq = np.sum(phi * phi, axis=-1)[..., None, None]
    angle = np.sqrt(angle_sq)
    small = angle_sq < 1e-12
    safe = np.where(small, 1.0, angle)
    a = np.where(small, 1.0 - angle_sq / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - angle_sq / 24.0, (1.0 - np.cos(safe)) / (safe * safe))
    k = hat(phi)
    return np.eye(3) + a * k + b * (k @ k)


def orthonormalize(r: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix (polar decomposition)"""
    u, _, vt = np.linalg.svd(r)
    out = u @ vt
    flip = np.linalg.det(out) < 0
    if np.any(flip):
        u[flip, :, 2] *= -1.0
        out = u @ vt
    return out


# --- Beam, ball and cable --------------------------------------------------


def ball_accel(p_b, theta, omega, params: PhysicalParams):
    """Rolling-ball acceleration along the beam"""
    return (p_b * omega**2 - params.gravity * np.sin(theta)) / params.ball_rolling_factor


def beam_angular_accel(
    state: BeamBallState,
    cable_torque,
    params: PhysicalParams,
    ball_on_beam=True,
):
    """Beam angular acceleration about the pivot; ball terms drop when the ball is off"""
    g = params.gravity
    m = params.ball_mass
    on = np.asarray(ball_on_beam, dtype=bool)
    theta, omega = state.theta, state.omega
    p_b, v_b = state.ball_pos, state.ball_vel
    cos_t = np.cos(theta)

    inertia = params.pivot_inertia + np.where(on, m * p_b * p_b, 0.0)
    ball_torque = np.where(on, 2.0 * m * p_b * v_b * omega + m * g * p_b * cos_t, 0.0)
    beam_torque = params.beam_mass * g * 0.5 * params.beam_length * cos_t
    return (cable_torque - ball_torque - beam_torque) / inertia


def beam_tip(theta, params: PhysicalParams) -> np.ndarray:
    """World position of the tethered beam end"""
    theta = np.asarray(theta, dtype=float)
    length = params.beam_length
    offset = np.stack([length * np.cos(theta), np.zeros_like(theta), length * np.sin(theta)], axis=-1)
    return np.asarray(params.pivot_position) + offset


def beam_tip_velocity(theta, omega, params: PhysicalParams) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    rate = params.beam_length * np.asarray(omega, dtype=float)
    return np.stack([-rate * np.sin(theta), np.zeros_like(theta), rate * np.cos(theta)], axis=-1)


def cable_force(drone_attach_pos, drone_attach_vel, tip_pos, tip_vel, params: PhysicalParams) -> np.ndarray:
    """Unilateral spring-damper force acting on the beam tip (the drone gets the opposite)"""
    delta = np.asarray(drone_attach_pos, dtype=float) - np.asarray(tip_pos, dtype=float)
    distance = np.linalg.norm(delta, axis=-1)
    degenerate = distance == 0.0
    if np.any(degenerate):
        logger.warning("Cable attach point coincides with the beam tip; applying zero force")
    safe = np.where(degenerate, 1.0, distance)
    unit = delta / safe[..., None]

    relative_vel = np.asarray(drone_attach_vel, dtype=float) - np.asarray(tip_vel, dtype=float)
    separating_speed = np.sum(relative_vel * unit, axis=-1)
    tension = params.cable_stiffness * (distance - params.cable_rest_length) + params.cable_damping * separating_speed

    taut = (distance > params.cable_rest_length) & ~degenerate
    tension = np.where(taut, np.maximum(tension, 0.0), 0.0)
    return tension[..., None] * unit


def cable_torque(theta, force_on_tip, params: PhysicalParams):
    """Torque about the pivot axis (positive lifts the tip)"""
    theta = np.asarray(theta, dtype=float)
    length = params.beam_length
    return length * (np.cos(theta) * force_on_tip[..., 2] - np.sin(theta) * force_on_tip[..., 0])


def static_cable_tension(p_b, params: PhysicalParams):
    """Vertical tip force that holds a level beam with the ball at p_b"""
    g = params.gravity
    return g * (params.ball_mass * p_b + params.beam_mass * 0.5 * params.beam_length) / params.beam_length


def beam_ball_energy(beam: BeamBallState, params: PhysicalParams):
    """Mechanical energy of the beam and ball"""
    m = params.ball_mass
    kinetic = 0.5 * (params.pivot_inertia + m * beam.ball_pos**2) * beam.omega**2
    kinetic = kinetic + 0.5 * m * params.ball_rolling_factor * beam.ball_vel**2
    potential = params.gravity * np.sin(beam.theta) * (m * beam.ball_pos + params.beam_mass * 0.5 * params.beam_length)
    return kinetic + potential


# --- Integration -------------------------------------------------------------


def _derivatives(pos, vel, rot, rate, theta, omega, p_b, v_b, on, wrench: Wrench, params: PhysicalParams):
    """Time derivatives of every state component"""
    if params.cable_enabled:
        tip = beam_tip(theta, params)
        tip_vel = beam_tip_velocity(theta, omega, params)
        f_tip = cable_force(pos, vel, tip, tip_vel, params)
    else:
        f_tip = np.zeros_like(pos)

    body_z = rot[..., :, 2]
    acc = (wrench.thrust[..., None] * body_z - f_tip) / params.drone_mass - params.gravity * E3

    inertia = np.asarray(params.drone_inertia)
    gyro = np.cross(rate, inertia * rate)
    rate_dot = (wrench.moment - gyro) / inertia
    rot_dot = rot @ hat(rate)

    beam = BeamBallState(theta, omega, p_b, v_b)
    omega_dot = beam_angular_accel(beam, cable_torque(theta, f_tip, params), params, on)
    v_b_dot = np.where(on, ball_accel(p_b, theta, omega, params), 0.0)
    p_b_dot = np.where(on, v_b, 0.0)

    return vel, acc, rot_dot, rate_dot, omega, omega_dot, p_b_dot, v_b_dot


def _step_semi_implicit(state: WorldState, wrench: Wrench, params: PhysicalParams, dt: float):
    d, b = state.drone, state.beam
    on = state.ball_on_beam
    _, acc, _, rate_dot, _, omega_dot, _, v_b_dot = _derivatives(
        d.position, d.velocity, d.attitude, d.angular_velocity,
        b.theta, b.omega, b.ball_pos, b.ball_vel, on, wrench, params,
    )
    vel = d.velocity + dt * acc
    pos = d.position + dt * vel
    rate = d.angular_velocity + dt * rate_dot
    rot = d.attitude @ so3_exp(dt * rate)

    omega = b.omega + dt * omega_dot
    theta = b.theta + dt * omega
    v_b = np.where(on, b.ball_vel + dt * v_b_dot, b.ball_vel)
    p_b = np.where(on, b.ball_pos + dt * v_b, b.ball_pos)
    return pos, vel, rot, rate, theta, omega, p_b, v_b


def _step_rk4(state: WorldState, wrench: Wrench, params: PhysicalParams, dt: float):
    d, b = state.drone, state.beam
    on = state.ball_on_beam
    y0 = (d.position, d.velocity, d.attitude, d.angular_velocity, b.theta, b.omega, b.ball_pos, b.ball_vel)

    def shifted(k, scale):
        return tuple(y + scale * dy for y, dy in zip(y0, k))

    k1 = _derivatives(*y0, on, wrench, params)
    k2 = _derivatives(*shifted(k1, 0.5 * dt), on, wrench, params)
    k3 = _derivatives(*shifted(k2, 0.5 * dt), on, wrench, params)
    k4 = _derivatives(*shifted(k3, dt), on, wrench, params)
    return tuple(
        y + (dt / 6.0) * (a + 2.0 * b_ + 2.0 * c + e)
        for y, a, b_, c, e in zip(y0, k1, k2, k3, k4)
    )


def check_finite(state: WorldState) -> None:
    """Raise SimulationFault naming the first non-finite field"""
    fields = {
        "drone.position": state.drone.position,
        "drone.velocity": state.drone.velocity,
        "drone.attitude": state.drone.attitude,
        "drone.angular_velocity": state.drone.angular_velocity,
        "beam.theta": state.beam.theta,
        "beam.omega": state.beam.omega,
        "beam.ball_pos": state.beam.ball_pos,
        "beam.ball_vel": state.beam.ball_vel,
    }
    for name, values in fields.items():
        finite = np.isfinite(values).reshape(values.shape[0], -1).all(axis=1)
        if not finite.all():
            raise SimulationFault(name, np.flatnonzero(~finite).tolist())


def step_world(state: WorldState, wrench: Wrench, params: PhysicalParams) -> WorldState:
    """Advance every world by one physics step"""
    dt = params.physics_dt
    if params.integrator == "rk4":
        pos, vel, rot, rate, theta, omega, p_b, v_b = _step_rk4(state, wrench, params, dt)
    else:
        pos, vel, rot, rate, theta, omega, p_b, v_b = _step_semi_implicit(state, wrench, params, dt)

    on = state.ball_on_beam & (p_b >= 0.0) & (p_b <= params.beam_length)
    new_state = WorldState(
        drone=DroneState(pos, vel, orthonormalize(rot), rate),
        beam=BeamBallState(theta, omega, p_b, v_b),
        time=state.time + dt,
        ball_on_beam=on,
    )
    check_finite(new_state)
    return new_state


def hover_state(
    ball_pos,
    params: PhysicalParams,
    ball_vel=None,
    omega=None,
) -> WorldState:
    """Level beam with the drone hovering above the tip on a taut cable"""
    ball_pos = np.atleast_1d(np.asarray(ball_pos, dtype=float))
    n = ball_pos.shape[0]
    ball_vel = np.zeros(n) if ball_vel is None else np.atleast_1d(np.asarray(ball_vel, dtype=float))
    omega = np.zeros(n) if omega is None else np.atleast_1d(np.asarray(omega, dtype=float))

    theta = np.zeros(n)
    tip = beam_tip(theta, params)
    if params.cable_enabled:
        stretch = static_cable_tension(ball_pos, params) / params.cable_stiffness
    else:
        stretch = np.zeros(n)
    position = tip + (params.cable_rest_length + stretch)[:, None] * E3
    velocity = beam_tip_velocity(theta, omega, params)

    return WorldState(
        drone=DroneState(
            position=position,
            velocity=velocity,
            attitude=np.tile(np.eye(3), (n, 1, 1)),
            angular_velocity=np.zeros((n, 3)),
        ),
        beam=BeamBallState(theta=theta, omega=omega, ball_pos=ball_pos.copy(), ball_vel=ball_vel),
        time=np.zeros(n),
        ball_on_beam=(ball_pos >= 0.0) & (ball_pos <= params.beam_length),
    )
