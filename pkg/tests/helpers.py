"""Shared test utilities: random elements and finite-difference Jacobians."""

from __future__ import annotations

import numpy as np

from trellismap.geometry import Pose, Rotation, so3_exp


def random_rotation(rng: np.random.Generator, max_angle: float = np.pi * 0.9) -> Rotation:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return so3_exp(axis * rng.uniform(0.0, max_angle))


def random_pose(rng: np.random.Generator, span: float = 10.0) -> Pose:
    return Pose(random_rotation(rng), rng.uniform(-span, span, size=3))


def retract(value, delta: np.ndarray):
    if isinstance(value, Pose):
        return Pose(value.rotation @ so3_exp(delta[0:3]), value.translation + delta[3:6])
    return np.asarray(value, dtype=float) + delta


def local_dim(value) -> int:
    return 6 if isinstance(value, Pose) else np.asarray(value).shape[0]


def numeric_jacobians(factor, values, step: float = 1e-6) -> list[np.ndarray]:
    """Central finite differences of factor.residual through the retraction."""
    r0 = factor.residual(values)
    jacs = []
    for vi, value in enumerate(values):
        dim = local_dim(value)
        jac = np.zeros((r0.shape[0], dim))
        for d in range(dim):
            delta = np.zeros(dim)
            delta[d] = step
            plus = list(values)
            minus = list(values)
            plus[vi] = retract(value, delta)
            minus[vi] = retract(value, -delta)
            jac[:, d] = (factor.residual(plus) - factor.residual(minus)) / (2.0 * step)
        jacs.append(jac)
    return jacs


def jacobian_mismatch(factor, values, step: float = 1e-6) -> float:
    """Worst relative Frobenius error between analytic and numeric Jacobians."""
    numeric = numeric_jacobians(factor, values, step)
    analytic = factor.jacobians(values)
    worst = 0.0
    for j_num, j_ana in zip(numeric, analytic):
        denom = max(1.0, np.linalg.norm(j_num))
        worst = max(worst, np.linalg.norm(j_num - j_ana) / denom)
    return worst
