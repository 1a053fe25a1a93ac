"""
Low-Level Flight Control

Velocity-tracking variant of the geometric SE(3) controller and the
plus-configuration rotor allocation, run at 180 Hz.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from pydantic import Field

from params import ParamsModel
from physics.world_dynamics import E3, DroneState, PhysicalParams, Wrench, vee

logger = logging.getLogger(__name__)

MIN_FORCE_NORM = 1e-6


class Se3Gains(ParamsModel):
    """Velocity, lateral-hold, attitude and rate gains"""

    k_v: float = Field(4.0, gt=0)
    k_p_lat: float = Field(4.0, gt=0)
    k_R: float = Field(0.8, gt=0)
    k_W: float = Field(0.12, gt=0)
    k_vi: float = Field(0.5, ge=0)  # vertical velocity integral, N/m


@dataclass
class VelocityCommand:
    """Reference for the velocity loop, arrays with a leading env axis"""

    v_ref: np.ndarray  # (N, 3); x and y held at 0
    yaw_ref: np.ndarray  # (N,)
    lateral_anchor: np.ndarray  # (N, 2)
    thrust_offset: Optional[np.ndarray] = None  # (N,) integral channel, N


def desired_attitude(force: np.ndarray, yaw: np.ndarray) -> np.ndarray:
    """Rotation whose body z is along force and whose heading is yaw"""
    b3 = force / np.linalg.norm(force, axis=-1, keepdims=True)
    heading = np.stack([np.cos(yaw), np.sin(yaw), np.zeros_like(yaw)], axis=-1)
    b2 = np.cross(b3, heading)
    b2 /= np.linalg.norm(b2, axis=-1, keepdims=True)
    b1 = np.cross(b2, b3)
    return np.stack([b1, b2, b3], axis=-1)


def se3_velocity_control(
    drone: DroneState,
    cmd: VelocityCommand,
    gains: Se3Gains,
    params: PhysicalParams,
    fallback_attitude: Optional[np.ndarray] = None,
) -> Wrench:
    """Thrust and body moment that track the commanded velocity"""
    wrench, _ = track_velocity(drone, cmd, gains, params, fallback_attitude)
    return wrench


def track_velocity(
    drone: DroneState,
    cmd: VelocityCommand,
    gains: Se3Gains,
    params: PhysicalParams,
    fallback_attitude: Optional[np.ndarray] = None,
) -> Tuple[Wrench, np.ndarray]:
    """Wrench and the (N, 3, 3) attitude target it steers toward

    Where the desired force vanishes the target is fallback_attitude, the
    previous target when the caller carries one, else the current attitude.
    """
    n = drone.position.shape[0]
    offset = np.zeros(n) if cmd.thrust_offset is None else cmd.thrust_offset

    lateral = np.zeros((n, 3))
    lateral[:, :2] = drone.position[:, :2] - cmd.lateral_anchor
    force = (
        -gains.k_v * (drone.velocity - cmd.v_ref)
        - gains.k_p_lat * lateral
        + (params.drone_mass * params.gravity + offset)[:, None] * E3
    )

    rot = drone.attitude
    thrust = np.einsum("ni,ni->n", force, rot[:, :, 2])

    degenerate = np.linalg.norm(force, axis=-1) < MIN_FORCE_NORM
    if np.any(degenerate):
        logger.warning(f"Degenerate thrust direction in {int(degenerate.sum())} env(s); holding attitude target")
        safe_force = np.where(degenerate[:, None], E3, force)
        rot_des = desired_attitude(safe_force, cmd.yaw_ref)
        hold = rot if fallback_attitude is None else fallback_attitude
        rot_des = np.where(degenerate[:, None, None], hold, rot_des)
    else:
        rot_des = desired_attitude(force, cmd.yaw_ref)

    rot_t = np.swapaxes(rot, -1, -2)
    rot_des_t = np.swapaxes(rot_des, -1, -2)
    e_rot = 0.5 * vee(rot_des_t @ rot - rot_t @ rot_des)
    rate = drone.angular_velocity
    inertia = np.asarray(params.drone_inertia)
    moment = -gains.k_R * e_rot - gains.k_W * rate + np.cross(rate, inertia * rate)
    return Wrench(thrust=thrust, moment=moment), rot_des


def update_thrust_offset(offset, v_z, v_ref_z, gains: Se3Gains, dt: float):
    """Integrate the vertical velocity error into the thrust offset"""
    return offset + gains.k_vi * (v_ref_z - v_z) * dt


def rotor_mixer(params: PhysicalParams) -> np.ndarray:
    """Map per-rotor thrusts to (f, Mx, My, Mz) for rotors on +x, +y, -x, -y"""
    arm = params.arm_length
    c = params.rotor_torque_coeff
    return np.array(
        [
            [1.0, 1.0, 1.0, 1.0],
            [0.0, arm, 0.0, -arm],
            [-arm, 0.0, arm, 0.0],
            [c, -c, c, -c],
        ]
    )


def mix(thrusts: np.ndarray, params: PhysicalParams) -> Wrench:
    """Wrench produced by (N, 4) rotor thrusts"""
    wrench = thrusts @ rotor_mixer(params).T
    return Wrench(thrust=wrench[:, 0], moment=wrench[:, 1:])


def allocate_rotors(wrench: Wrench, params: PhysicalParams) -> Tuple[np.ndarray, Wrench]:
    """Per-rotor thrusts clamped to [0, rotor_thrust_max] and the wrench they realize"""
    requested = np.concatenate([wrench.thrust[:, None], wrench.moment], axis=1)
    inverse = np.linalg.inv(rotor_mixer(params))
    thrusts = np.clip(requested @ inverse.T, 0.0, params.rotor_thrust_max)
    return thrusts, mix(thrusts, params)
