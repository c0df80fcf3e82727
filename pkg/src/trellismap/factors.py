"""Residuals and analytic Jacobians for every constraint type in the graph.

Local parameterizations used by all Jacobians (and by the solver's retraction):

- pose (6): rotation delta applied on the right, translation additive:
  R <- R Exp(dtheta), t <- t + dt
- velocity / landmark (3): additive.

Jacobians are with respect to these deltas, so central finite differences of
the residual through the same retraction must reproduce them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .geometry import (
    Pose,
    Rotation,
    skew,
    so3_log,
    so3_right_jacobian_inv,
    tangent_basis,
)
from .imu import PreintegratedDelta, RobotState, imu_residual

GRAVITY_ENU = np.array([0.0, 0.0, -9.81])
_UNIT_GRAVITY = np.array([0.0, 0.0, -1.0])


class NoiseModel:
    """Gaussian noise with optional Huber robustification.

    Whitening multiplies by the square-root information matrix, so the plain
    cost of a residual r is 0.5 * ||whiten(r)||^2 = 0.5 * r^T Sigma^-1 r.
    """

    def __init__(self, covariance, huber_delta: float | None = None):
        cov = np.asarray(covariance, dtype=float)
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
            raise ValueError("covariance must be square")
        if np.max(np.abs(cov - cov.T)) > 1e-9 * max(1.0, np.max(np.abs(cov))):
            raise ValueError("covariance must be symmetric")
        cov = 0.5 * (cov + cov.T)
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise ValueError("covariance must be positive definite") from exc
        self.covariance = cov
        self.sqrt_info = solve_triangular(chol, np.eye(cov.shape[0]), lower=True)
        self.huber_delta = huber_delta

    @classmethod
    def from_sigmas(cls, sigmas, huber_delta: float | None = None) -> "NoiseModel":
        s = np.asarray(sigmas, dtype=float)
        return cls(np.diag(s * s), huber_delta=huber_delta)

    @classmethod
    def isotropic(cls, dim: int, sigma: float, huber_delta: float | None = None) -> "NoiseModel":
        return cls(np.eye(dim) * sigma * sigma, huber_delta=huber_delta)

    @property
    def dim(self) -> int:
        return self.covariance.shape[0]

    def whiten(self, r: np.ndarray) -> np.ndarray:
        return self.sqrt_info @ r

    def robust_weight(self, whitened_norm: float) -> float:
        """IRLS weight; residual and Jacobian are scaled by its square root."""
        if self.huber_delta is None or whitened_norm <= self.huber_delta:
            return 1.0
        return self.huber_delta / whitened_norm

    def cost(self, whitened_norm: float) -> float:
        if self.huber_delta is None or whitened_norm <= self.huber_delta:
            return 0.5 * whitened_norm * whitened_norm
        return self.huber_delta * (whitened_norm - 0.5 * self.huber_delta)


@dataclass(frozen=True)
class BearingRange:
    """Direction on the unit sphere plus distance, with covariance in
    (tangent-1, tangent-2, range) coordinates anchored at the bearing."""

    bearing: np.ndarray
    range: float
    covariance: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.bearing, dtype=float)
        if abs(np.linalg.norm(u) - 1.0) > 1e-6:
            raise ValueError("bearing must be a unit vector")
        if self.range <= 0:
            raise ValueError("range must be positive")
        object.__setattr__(self, "bearing", u)
        object.__setattr__(self, "covariance", np.asarray(self.covariance, dtype=float))


def cartesian_to_bearing_range(p, sigma_xyz, min_eigenvalue: float = 1e-8) -> BearingRange:
    """Convert a sensor-frame point and its Cartesian noise to bearing-range.

    The covariance is propagated through the transformation Jacobian
    J = [B^T (1/r)(I - u u^T); u^T], then symmetrized and eigenvalue-floored
    so the result is always usable as a Gaussian noise model.
    """
    p = np.asarray(p, dtype=float)
    r = float(np.linalg.norm(p))
    if r < 1e-9:
        raise ValueError("zero-norm point has no bearing")
    u = p / r
    b = tangent_basis(u)
    jac = np.vstack([b.T @ ((np.eye(3) - np.outer(u, u)) / r), u[None, :]])
    cov = jac @ np.asarray(sigma_xyz, dtype=float) @ jac.T
    cov = 0.5 * (cov + cov.T)
    vals, vecs = np.linalg.eigh(cov)
    vals = np.maximum(vals, min_eigenvalue)
    cov = (vecs * vals) @ vecs.T
    cov = 0.5 * (cov + cov.T)
    return BearingRange(bearing=u, range=r, covariance=cov)


class Factor:
    """Residual + Jacobian block attached to an ordered tuple of variables."""

    def __init__(self, keys, noise: NoiseModel):
        self.keys = tuple(keys)
        self.noise = noise

    def residual(self, values) -> np.ndarray:
        raise NotImplementedError

    def jacobians(self, values) -> list[np.ndarray]:
        raise NotImplementedError


class PriorPoseFactor(Factor):
    def __init__(self, key, prior: Pose, noise: NoiseModel):
        super().__init__((key,), noise)
        self.prior = prior

    def residual(self, values):
        pose: Pose = values[0]
        r_rot = so3_log(self.prior.rotation.inverse() @ pose.rotation)
        return np.concatenate([r_rot, pose.translation - self.prior.translation])

    def jacobians(self, values):
        pose: Pose = values[0]
        r_rot = so3_log(self.prior.rotation.inverse() @ pose.rotation)
        j = np.zeros((6, 6))
        j[0:3, 0:3] = so3_right_jacobian_inv(r_rot)
        j[3:6, 3:6] = np.eye(3)
        return [j]


class PriorRotationFactor(Factor):
    def __init__(self, key, prior: Rotation, noise: NoiseModel):
        super().__init__((key,), noise)
        self.prior = prior

    def residual(self, values):
        return so3_log(self.prior.inverse() @ values[0].rotation)

    def jacobians(self, values):
        r = self.residual(values)
        j = np.zeros((3, 6))
        j[:, 0:3] = so3_right_jacobian_inv(r)
        return [j]


class PriorVectorFactor(Factor):
    """Gaussian prior on a velocity or landmark variable."""

    def __init__(self, key, prior, noise: NoiseModel):
        super().__init__((key,), noise)
        self.prior = np.asarray(prior, dtype=float)

    def residual(self, values):
        return np.asarray(values[0], dtype=float) - self.prior

    def jacobians(self, values):
        return [np.eye(self.prior.shape[0])]


class GpsFactor(Factor):
    """Constrains the translational part of a pose to an ENU fix."""

    def __init__(self, key, fix_enu, noise: NoiseModel):
        super().__init__((key,), noise)
        self.fix = np.asarray(fix_enu, dtype=float)

    def residual(self, values):
        return values[0].translation - self.fix

    def jacobians(self, values):
        j = np.zeros((3, 6))
        j[:, 3:6] = np.eye(3)
        return [j]


class AttitudeFactor(Factor):
    """Roll/pitch constraint from a reference orientation; yaw-invariant.

    Compares body-frame gravity projections of the estimated and measured
    orientations, expressed in the tangent plane at the measured direction,
    which makes the residual exactly two-dimensional.
    """

    def __init__(self, key, reference: Rotation, noise: NoiseModel):
        super().__init__((key,), noise)
        self.g_body = reference.inverse().apply(_UNIT_GRAVITY)
        self.basis = tangent_basis(self.g_body)

    def residual(self, values):
        g_est = values[0].rotation.matrix.T @ _UNIT_GRAVITY
        return self.basis.T @ (g_est - self.g_body)

    def jacobians(self, values):
        g_est = values[0].rotation.matrix.T @ _UNIT_GRAVITY
        j = np.zeros((2, 6))
        j[:, 0:3] = self.basis.T @ skew(g_est)
        return [j]


class HeadingFactor(Factor):
    """Wrap-free heading constraint through the first rotation-matrix column.

    The horizontal projection of the body x-axis is compared with the
    measured (cos yaw, sin yaw) direction; the chordal difference is smooth
    across +/-pi. Near-vertical body x-axes make the projection degenerate,
    in which case the factor deactivates (zero residual and Jacobian).
    """

    MIN_HORIZONTAL = 0.1

    def __init__(self, key, yaw: float, noise: NoiseModel):
        super().__init__((key,), noise)
        self.target = np.array([np.cos(yaw), np.sin(yaw)])

    def residual(self, values):
        h = values[0].rotation.matrix[:2, 0]
        n = np.linalg.norm(h)
        if n < self.MIN_HORIZONTAL:
            return np.zeros(2)
        return h / n - self.target

    def jacobians(self, values):
        rot = values[0].rotation.matrix
        h = rot[:2, 0]
        n = np.linalg.norm(h)
        j = np.zeros((2, 6))
        if n < self.MIN_HORIZONTAL:
            return [j]
        hn = h / n
        d_norm = (np.eye(2) - np.outer(hn, hn)) / n
        d_col = -rot @ skew(np.array([1.0, 0.0, 0.0]))
        j[:, 0:3] = d_norm @ d_col[:2, :]
        return [j]


class NonholonomicFactor(Factor):
    """Penalizes lateral and vertical body-frame velocity (keys: pose, velocity)."""

    def __init__(self, pose_key, vel_key, noise: NoiseModel):
        super().__init__((pose_key, vel_key), noise)

    def residual(self, values):
        v_body = values[0].rotation.matrix.T @ np.asarray(values[1], dtype=float)
        return v_body[1:]

    def jacobians(self, values):
        rot_t = values[0].rotation.matrix.T
        v_body = rot_t @ np.asarray(values[1], dtype=float)
        j_pose = np.zeros((2, 6))
        j_pose[:, 0:3] = skew(v_body)[1:, :]
        return [j_pose, rot_t[1:, :]]


class ImuFactor(Factor):
    """Preintegrated inertial constraint (keys: pose_i, vel_i, pose_j, vel_j)."""

    def __init__(self, pose_i, vel_i, pose_j, vel_j, delta: PreintegratedDelta, gravity=None):
        super().__init__((pose_i, vel_i, pose_j, vel_j), NoiseModel(delta.covariance))
        self.delta = delta
        self.gravity = GRAVITY_ENU if gravity is None else np.asarray(gravity, dtype=float)

    def residual(self, values):
        state_i = RobotState(values[0], values[1])
        state_j = RobotState(values[2], values[3])
        return imu_residual(self.delta, state_i, state_j, self.gravity)

    def jacobians(self, values):
        pose_i: Pose = values[0]
        vel_i = np.asarray(values[1], dtype=float)
        pose_j: Pose = values[2]
        vel_j = np.asarray(values[3], dtype=float)
        dt = self.delta.dt
        r_i_t = pose_i.rotation.matrix.T
        r_j = pose_j.rotation.matrix

        r_rot = so3_log(self.delta.rotation.inverse() @ (pose_i.rotation.inverse() @ pose_j.rotation))
        jr_inv = so3_right_jacobian_inv(r_rot)
        w = vel_j - vel_i - self.gravity * dt
        u = pose_j.translation - pose_i.translation - vel_i * dt - 0.5 * self.gravity * dt * dt

        j_pose_i = np.zeros((9, 6))
        j_pose_i[0:3, 0:3] = -jr_inv @ (r_j.T @ pose_i.rotation.matrix)
        j_pose_i[3:6, 0:3] = skew(r_i_t @ w)
        j_pose_i[6:9, 0:3] = skew(r_i_t @ u)
        j_pose_i[6:9, 3:6] = -r_i_t

        j_vel_i = np.zeros((9, 3))
        j_vel_i[3:6, :] = -r_i_t
        j_vel_i[6:9, :] = -r_i_t * dt

        j_pose_j = np.zeros((9, 6))
        j_pose_j[0:3, 0:3] = jr_inv
        j_pose_j[6:9, 3:6] = r_i_t

        j_vel_j = np.zeros((9, 3))
        j_vel_j[3:6, :] = r_i_t

        return [j_pose_i, j_vel_i, j_pose_j, j_vel_j]


class BearingRangeFactor(Factor):
    """Landmark observation in the sensor frame (keys: pose, landmark).

    The bearing error lives in the tangent plane anchored at the measured
    bearing, matching the basis the measurement covariance was propagated
    into; at convergence this coincides with the predicted-bearing basis.
    Predictions collapsing onto the sensor origin deactivate the factor.
    """

    MIN_RANGE = 1e-3

    def __init__(self, pose_key, lm_key, measurement: BearingRange, extrinsic: Pose | None = None):
        super().__init__((pose_key, lm_key), NoiseModel(measurement.covariance))
        self.measurement = measurement
        self.extrinsic = Pose.identity() if extrinsic is None else extrinsic
        self.basis = tangent_basis(measurement.bearing)

    def _camera_point(self, pose: Pose, landmark: np.ndarray) -> np.ndarray:
        p_body = pose.rotation.matrix.T @ (landmark - pose.translation)
        return self.extrinsic.rotation.matrix.T @ (p_body - self.extrinsic.translation)

    def residual(self, values):
        p_c = self._camera_point(values[0], np.asarray(values[1], dtype=float))
        r_hat = np.linalg.norm(p_c)
        if r_hat < self.MIN_RANGE:
            return np.zeros(3)
        u_hat = p_c / r_hat
        return np.concatenate(
            [self.basis.T @ (self.measurement.bearing - u_hat), [self.measurement.range - r_hat]]
        )

    def jacobians(self, values):
        pose: Pose = values[0]
        landmark = np.asarray(values[1], dtype=float)
        p_c = self._camera_point(pose, landmark)
        r_hat = np.linalg.norm(p_c)
        if r_hat < self.MIN_RANGE:
            return [np.zeros((3, 6)), np.zeros((3, 3))]
        u_hat = p_c / r_hat
        d_res = np.zeros((3, 3))
        d_res[0:2, :] = -self.basis.T @ ((np.eye(3) - np.outer(u_hat, u_hat)) / r_hat)
        d_res[2, :] = -u_hat
        r_cb = self.extrinsic.rotation.matrix.T
        m = r_cb @ pose.rotation.matrix.T
        j_pose = np.zeros((3, 6))
        j_pose[:, 0:3] = d_res @ (r_cb @ skew(pose.rotation.matrix.T @ (landmark - pose.translation)))
        j_pose[:, 3:6] = d_res @ (-m)
        return [j_pose, d_res @ m]


class ZeroDisplacementFactor(Factor):
    """Soft equality between two landmark positions (keys: lm_a, lm_b)."""

    def __init__(self, key_a, key_b, noise: NoiseModel):
        super().__init__((key_a, key_b), noise)

    def residual(self, values):
        return np.asarray(values[0], dtype=float) - np.asarray(values[1], dtype=float)

    def jacobians(self, values):
        return [np.eye(3), -np.eye(3)]
