"""Preintegration of high-rate gyro/accel streams between keyframes.

A stream of samples is compressed into a single relative-motion constraint
(delta rotation, velocity and position in the frame of the first keyframe)
with a 9x9 covariance ordered (rotation, velocity, position). Biases are
fixed calibration constants; there are no bias states.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, Rotation, skew, so3_exp, so3_log, so3_right_jacobian


@dataclass(frozen=True)
class ImuSample:
    t: float
    gyro: np.ndarray
    accel: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "gyro", np.asarray(self.gyro, dtype=float))
        object.__setattr__(self, "accel", np.asarray(self.accel, dtype=float))


@dataclass(frozen=True)
class ImuNoise:
    """Per-sample standard deviations at the stream rate."""

    gyro_sigma: float = 0.002
    accel_sigma: float = 0.02


@dataclass(frozen=True)
class RobotState:
    """One keyframe state: world-from-body pose and world-frame velocity."""

    pose: Pose
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "velocity", np.asarray(self.velocity, dtype=float))


@dataclass(frozen=True)
class PreintegratedDelta:
    rotation: Rotation
    velocity: np.ndarray
    position: np.ndarray
    dt: float
    covariance: np.ndarray


def preintegrate(samples, gyro_bias, accel_bias, noise: ImuNoise) -> PreintegratedDelta:
    """Midpoint integration of bias-corrected samples over consecutive pairs.

    Gravity is not part of the delta; it enters the residual through the
    connected states. Covariance is propagated through the linearized
    discrete dynamics in (rotation, velocity, position) order.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("empty sample stream")
    times = np.array([s.t for s in samples])
    if np.any(np.diff(times) <= 0):
        raise ValueError("sample timestamps must be strictly increasing")
    gyro_bias = np.asarray(gyro_bias, dtype=float)
    accel_bias = np.asarray(accel_bias, dtype=float)

    d_rot = Rotation.identity()
    d_vel = np.zeros(3)
    d_pos = np.zeros(3)
    cov = np.zeros((9, 9))
    var_g = noise.gyro_sigma**2
    var_a = noise.accel_sigma**2

    for s0, s1 in zip(samples[:-1], samples[1:]):
        dt = s1.t - s0.t
        w = 0.5 * (s0.gyro + s1.gyro) - gyro_bias
        a = 0.5 * (s0.accel + s1.accel) - accel_bias
        r_k = d_rot.matrix
        theta = w * dt
        step = so3_exp(theta)
        j_r = so3_right_jacobian(theta)
        ra = r_k @ a

        big_a = np.eye(9)
        big_a[0:3, 0:3] = step.matrix.T
        big_a[3:6, 0:3] = -r_k @ skew(a) * dt
        big_a[6:9, 0:3] = -0.5 * r_k @ skew(a) * dt * dt
        big_a[6:9, 3:6] = np.eye(3) * dt

        big_b = np.zeros((9, 6))
        big_b[0:3, 0:3] = j_r * dt
        big_b[3:6, 3:6] = r_k * dt
        big_b[6:9, 3:6] = 0.5 * r_k * dt * dt

        noise_diag = np.concatenate([np.full(3, var_g), np.full(3, var_a)])
        cov = big_a @ cov @ big_a.T + (big_b * noise_diag) @ big_b.T

        d_pos = d_pos + d_vel * dt + 0.5 * ra * dt * dt
        d_vel = d_vel + ra * dt
        d_rot = d_rot @ step

    cov = 0.5 * (cov + cov.T) + 1e-14 * np.eye(9)
    return PreintegratedDelta(
        rotation=d_rot,
        velocity=d_vel,
        position=d_pos,
        dt=float(times[-1] - times[0]),
        covariance=cov,
    )


def imu_residual(
    delta: PreintegratedDelta,
    state_i: RobotState,
    state_j: RobotState,
    gravity,
) -> np.ndarray:
    """9-vector (rotation log-error, velocity error, position error).

    Zero exactly when the two states are consistent with the preintegrated
    delta under the given gravity.
    """
    g = np.asarray(gravity, dtype=float)
    dt = delta.dt
    r_i = state_i.pose.rotation
    r_i_t = r_i.matrix.T
    r_rot = so3_log(delta.rotation.inverse() @ (r_i.inverse() @ state_j.pose.rotation))
    r_vel = r_i_t @ (state_j.velocity - state_i.velocity - g * dt) - delta.velocity
    r_pos = (
        r_i_t
        @ (
            state_j.pose.translation
            - state_i.pose.translation
            - state_i.velocity * dt
            - 0.5 * g * dt * dt
        )
        - delta.position
    )
    return np.concatenate([r_rot, r_vel, r_pos])


def predict_state(state_i: RobotState, delta: PreintegratedDelta, gravity) -> RobotState:
    """Propagate a state through a delta; the residual of the result is zero."""
    g = np.asarray(gravity, dtype=float)
    dt = delta.dt
    r_i = state_i.pose.rotation
    rot_j = r_i @ delta.rotation
    vel_j = state_i.velocity + g * dt + r_i.apply(delta.velocity)
    pos_j = (
        state_i.pose.translation
        + state_i.velocity * dt
        + 0.5 * g * dt * dt
        + r_i.apply(delta.position)
    )
    return RobotState(Pose(rot_j, pos_j), vel_j)
