"""Sparse nonlinear least-squares over poses, velocities and landmarks.

Levenberg-Marquardt on the robustified sum of squared Mahalanobis residuals.
Incremental operation is a warm-started re-solve of the full graph with a
small iteration cap; a final full-graph solve at the end of a run makes the
result match a from-scratch batch solve.

Variable ordering is fixed (poses by index, then velocities by index, then
landmarks by creation order) so identical inputs produce identical results.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse
import scipy.sparse.linalg
from scipy.linalg import cho_factor, cho_solve

from .factors import Factor
from .geometry import Pose, so3_exp

POSE = "pose"
VELOCITY = "vel"
LANDMARK = "lm"

_DIMS = {POSE: 6, VELOCITY: 3, LANDMARK: 3}


class SolverError(RuntimeError):
    pass


class UnderconstrainedError(SolverError):
    """The undamped normal equations are rank deficient (gauge not fixed)."""


@dataclass(frozen=True)
class Key:
    kind: str
    index: int
    lm_class: str | None = field(default=None, compare=False)

    def __repr__(self):
        tag = f":{self.lm_class}" if self.lm_class else ""
        return f"{self.kind}{self.index}{tag}"


def pose_key(index: int) -> Key:
    return Key(POSE, index)


def velocity_key(index: int) -> Key:
    return Key(VELOCITY, index)


def landmark_key(index: int, lm_class: str | None = None) -> Key:
    return Key(LANDMARK, index, lm_class)


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 100
    lambda_init: float = 1e-6
    rel_tol: float = 1e-8
    cost_floor: float = 1e-20
    gradient_tol: float = 1e-12
    lambda_factor: float = 10.0
    lambda_max: float = 1e10
    dense_threshold: int = 200


@dataclass
class OptimizeReport:
    converged: bool
    iterations: int
    initial_cost: float
    final_cost: float
    message: str = ""
    accepted_costs: list[float] = field(default_factory=list)


def _retract(kind: str, value, delta: np.ndarray):
    if kind == POSE:
        return Pose(value.rotation @ so3_exp(delta[0:3]), value.translation + delta[3:6])
    return value + delta


class FactorGraph:
    def __init__(self):
        self._values: dict[Key, object] = {}
        self._lm_order: list[Key] = []
        self._factors: list[Factor] = []

    # ------------------------------------------------------------------ #
    # Variables and factors

    def add_variable(self, key: Key, initial_estimate) -> None:
        if key in self._values:
            raise ValueError(f"duplicate variable key {key}")
        if key.kind not in _DIMS:
            raise ValueError(f"unknown variable kind {key.kind!r}")
        if key.kind != POSE:
            initial_estimate = np.asarray(initial_estimate, dtype=float)
        self._values[key] = initial_estimate
        if key.kind == LANDMARK:
            self._lm_order.append(key)

    def add_factor(self, factor: Factor) -> None:
        for key in factor.keys:
            if key not in self._values:
                raise ValueError(f"factor references missing variable {key}")
        self._factors.append(factor)

    def has_variable(self, key: Key) -> bool:
        return key in self._values

    def estimate(self, key: Key):
        return self._values[key]

    def set_estimate(self, key: Key, value) -> None:
        if key not in self._values:
            raise ValueError(f"unknown variable {key}")
        self._values[key] = value

    def keys(self, kind: str | None = None, lm_class: str | None = None) -> list[Key]:
        out = []
        for key in self._ordered_keys():
            if kind is not None and key.kind != kind:
                continue
            if lm_class is not None and key.lm_class != lm_class:
                continue
            out.append(key)
        return out

    @property
    def num_variables(self) -> int:
        return len(self._values)

    @property
    def num_factors(self) -> int:
        return len(self._factors)

    @property
    def factors(self) -> tuple[Factor, ...]:
        return tuple(self._factors)

    def _ordered_keys(self) -> list[Key]:
        poses = sorted((k for k in self._values if k.kind == POSE), key=lambda k: k.index)
        vels = sorted((k for k in self._values if k.kind == VELOCITY), key=lambda k: k.index)
        return poses + vels + list(self._lm_order)

    # ------------------------------------------------------------------ #
    # Cost and linearization

    def cost(self, values: dict[Key, object] | None = None) -> float:
        values = self._values if values is None else values
        total = 0.0
        for f in self._factors:
            r_w = f.noise.whiten(f.residual([values[k] for k in f.keys]))
            total += f.noise.cost(float(np.linalg.norm(r_w)))
        return total

    def _offsets(self, ordered: list[Key]) -> tuple[dict[Key, int], int]:
        offsets = {}
        pos = 0
        for key in ordered:
            offsets[key] = pos
            pos += _DIMS[key.kind]
        return offsets, pos

    def _linearize(self, offsets: dict[Key, int], total_dim: int):
        """Whitened, robust-weighted normal equations H = J^T J, g = J^T r."""
        rows_i: list[np.ndarray] = []
        cols_i: list[np.ndarray] = []
        vals: list[np.ndarray] = []
        g = np.zeros(total_dim)
        row0 = 0
        blocks = []
        for f in self._factors:
            values = [self._values[k] for k in f.keys]
            r = f.noise.whiten(f.residual(values))
            jacs = f.jacobians(values)
            weight = f.noise.robust_weight(float(np.linalg.norm(r)))
            scale = np.sqrt(weight)
            r = r * scale
            dim = r.shape[0]
            for key, jac in zip(f.keys, jacs):
                j_w = (f.noise.sqrt_info @ jac) * scale
                off = offsets[key]
                blocks.append((row0, off, j_w))
                g[off : off + j_w.shape[1]] += j_w.T @ r
            row0 += dim

        for r0, c0, block in blocks:
            h, w = block.shape
            rr, cc = np.meshgrid(np.arange(r0, r0 + h), np.arange(c0, c0 + w), indexing="ij")
            rows_i.append(rr.ravel())
            cols_i.append(cc.ravel())
            vals.append(block.ravel())
        jac = scipy.sparse.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows_i), np.concatenate(cols_i))),
            shape=(row0, total_dim),
        ).tocsr()
        hess = (jac.T @ jac).tocsc()
        return hess, g

    @staticmethod
    def _check_full_rank(hess, dense: bool) -> None:
        if dense:
            h = hess.toarray()
            diag = np.abs(np.diag(h))
            if diag.size == 0:
                raise UnderconstrainedError("empty system")
            if np.min(diag) <= 1e-12 * max(1.0, np.max(diag)):
                raise UnderconstrainedError("variable with no effective constraints")
            try:
                np.linalg.cholesky(h)
            except np.linalg.LinAlgError as exc:
                raise UnderconstrainedError(
                    "normal equations are singular; the gauge is not fixed"
                ) from exc
        else:
            try:
                lu = scipy.sparse.linalg.splu(hess)
            except RuntimeError as exc:
                raise UnderconstrainedError(
                    "normal equations are singular; the gauge is not fixed"
                ) from exc
            pivots = np.abs(lu.U.diagonal())
            if np.min(pivots) <= 1e-12 * max(1.0, np.max(pivots)):
                raise UnderconstrainedError("normal equations are singular; the gauge is not fixed")

    @staticmethod
    def _solve(hess, g, lam: float, dense: bool) -> np.ndarray:
        diag = hess.diagonal()
        damped_diag = diag + lam * np.maximum(diag, 1e-12)
        if dense:
            h = hess.toarray().copy()
            np.fill_diagonal(h, damped_diag)
            return cho_solve(cho_factor(h, lower=True), -g)
        damped = hess.copy().tolil()
        damped.setdiag(damped_diag)
        return scipy.sparse.linalg.splu(damped.tocsc()).solve(-g)

    # ------------------------------------------------------------------ #
    # Optimization

    def optimize(self, config: SolverConfig | None = None) -> OptimizeReport:
        config = config or SolverConfig()
        if not self._factors:
            return OptimizeReport(True, 0, 0.0, 0.0, "no factors")
        ordered = self._ordered_keys()
        offsets, total_dim = self._offsets(ordered)
        dense = total_dim < config.dense_threshold

        cost = self.cost()
        report = OptimizeReport(False, 0, cost, cost)
        lam = config.lambda_init
        checked_rank = False

        for it in range(config.max_iterations):
            hess, g = self._linearize(offsets, total_dim)
            if not checked_rank:
                self._check_full_rank(hess, dense)
                checked_rank = True
            if np.max(np.abs(g), initial=0.0) < config.gradient_tol:
                report.converged = True
                report.message = "gradient below tolerance"
                break

            accepted = False
            while lam <= config.lambda_max:
                delta = self._solve(hess, g, lam, dense)
                candidate = {
                    key: _retract(key.kind, self._values[key], delta[offsets[key] : offsets[key] + _DIMS[key.kind]])
                    for key in ordered
                }
                new_cost = self.cost(candidate)
                if np.isfinite(new_cost) and new_cost <= cost:
                    self._values.update(candidate)
                    accepted = True
                    lam = max(lam / config.lambda_factor, 1e-12)
                    break
                lam *= config.lambda_factor
            report.iterations = it + 1
            if not accepted:
                report.converged = True
                report.message = "no decreasing step (local minimum)"
                break

            decrease = cost - new_cost
            cost = new_cost
            report.accepted_costs.append(cost)
            if cost < config.cost_floor:
                report.converged = True
                report.message = "cost below floor"
                break
            if decrease < config.rel_tol * max(cost, 1e-300):
                report.converged = True
                report.message = "relative decrease below tolerance"
                break
        else:
            report.message = "max iterations reached"

        report.final_cost = cost
        return report

    def incremental_update(
        self,
        new_factors=(),
        new_variables: dict[Key, object] | None = None,
        config: SolverConfig | None = None,
    ) -> OptimizeReport:
        """Warm-started re-solve after appending variables/factors (<= 10 iterations)."""
        for key, value in (new_variables or {}).items():
            self.add_variable(key, value)
        for f in new_factors:
            self.add_factor(f)
        base = config or SolverConfig()
        capped = SolverConfig(
            max_iterations=min(10, base.max_iterations),
            lambda_init=base.lambda_init,
            rel_tol=base.rel_tol,
            cost_floor=base.cost_floor,
            gradient_tol=base.gradient_tol,
            lambda_factor=base.lambda_factor,
            lambda_max=base.lambda_max,
            dense_threshold=base.dense_threshold,
        )
        return self.optimize(capped)

    # ------------------------------------------------------------------ #
    # Marginals

    def landmark_marginals(self, config: SolverConfig | None = None) -> dict[Key, np.ndarray]:
        """Per-landmark 3x3 covariance blocks of the inverse Gauss-Newton
        information at the current estimate, via back-substitution."""
        config = config or SolverConfig()
        lm_keys = [k for k in self._ordered_keys() if k.kind == LANDMARK]
        if not lm_keys:
            return {}
        ordered = self._ordered_keys()
        offsets, total_dim = self._offsets(ordered)
        hess, _ = self._linearize(offsets, total_dim)
        dense = total_dim < config.dense_threshold
        out: dict[Key, np.ndarray] = {}
        if dense:
            factor = cho_factor(hess.toarray(), lower=True)
            solve = lambda rhs: cho_solve(factor, rhs)
        else:
            lu = scipy.sparse.linalg.splu(hess)
            solve = lu.solve
        for key in lm_keys:
            off = offsets[key]
            rhs = np.zeros((total_dim, 3))
            rhs[off : off + 3] = np.eye(3)
            cols = solve(rhs)
            out[key] = np.asarray(cols[off : off + 3, :])
        return out
