"""Post-traverse map consolidation.

Per semantic class, landmark estimates are density-clustered with a radius
of half the mean nearest-neighbor spacing; every intra-cluster pair gets
a soft zero-displacement factor and the whole graph is re-optimized so
co-located duplicates are attracted toward a consensus position without
removing any variables.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .association import Landmark
from .factors import NoiseModel, ZeroDisplacementFactor
from .graph import FactorGraph, Key, OptimizeReport, SolverConfig


@dataclass
class ClusterReport:
    cls: str
    epsilon: float
    clusters: list[list[Key]] = field(default_factory=list)
    noise_keys: list[Key] = field(default_factory=list)
    factors_added: int = 0


def compute_epsilon(positions) -> float | None:
    """Half the mean nearest-neighbor distance (xy) between the positions.

    None for fewer than two landmarks: nothing to cluster against.
    """
    positions = np.atleast_2d(np.asarray(positions, dtype=float))[:, :2]
    n = positions.shape[0]
    if n < 2:
        return None
    deltas = positions[:, None, :] - positions[None, :, :]
    dists = np.linalg.norm(deltas, axis=2)
    np.fill_diagonal(dists, np.inf)
    return float(np.mean(np.min(dists, axis=1)) / 2.0)


def dbscan(points, epsilon: float, min_pts: int = 2) -> np.ndarray:
    """Density clustering over xy positions; label -1 marks noise.

    A point is core if at least min_pts points (itself included) lie within
    epsilon. Labels are assigned by scan order, so results are deterministic
    for a given input ordering.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))[:, :2]
    n = points.shape[0]
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if min_pts < 1:
        raise ValueError("min_pts must be at least 1")
    labels = np.full(n, -2)  # -2 unvisited, -1 noise
    dists = np.linalg.norm(points[:, None, :] - points[None, :, :], axis=2)
    neighbors = [np.flatnonzero(dists[i] <= epsilon) for i in range(n)]
    cluster = -1
    for i in range(n):
        if labels[i] != -2:
            continue
        if len(neighbors[i]) < min_pts:
            labels[i] = -1
            continue
        cluster += 1
        labels[i] = cluster
        frontier = list(neighbors[i])
        j = 0
        while j < len(frontier):
            q = frontier[j]
            j += 1
            if labels[q] == -1:
                labels[q] = cluster
            if labels[q] != -2:
                continue
            labels[q] = cluster
            if len(neighbors[q]) >= min_pts:
                frontier.extend(neighbors[q])
    return labels


def consolidate(
    graph: FactorGraph,
    landmarks: dict[Key, Landmark],
    sigma_d: float = 0.1,
    min_pts: int = 2,
    solver_config: SolverConfig | None = None,
) -> tuple[OptimizeReport, dict[str, ClusterReport]]:
    """Add intra-cluster zero-displacement factors per class, then re-optimize.

    Landmark variables are never added or removed here; singletons survive
    as noise points, untouched.
    """
    reports: dict[str, ClusterReport] = {}
    noise = NoiseModel.isotropic(3, sigma_d)
    for cls in sorted({lm.cls for lm in landmarks.values()}):
        keys = [k for k in sorted(landmarks, key=lambda k: k.index) if landmarks[k].cls == cls]
        positions = np.vstack([graph.estimate(k) for k in keys]) if keys else np.zeros((0, 3))
        epsilon = compute_epsilon(positions)
        if epsilon is None or epsilon <= 0:
            continue
        labels = dbscan(positions, epsilon, min_pts)
        report = ClusterReport(cls=cls, epsilon=epsilon)
        for label in sorted(set(labels)):
            members = [keys[i] for i in np.flatnonzero(labels == label)]
            if label == -1:
                report.noise_keys.extend(members)
                continue
            report.clusters.append(members)
            for i, ka in enumerate(members):
                for kb in members[i + 1 :]:
                    graph.add_factor(ZeroDisplacementFactor(ka, kb, noise))
                    report.factors_added += 1
        reports[cls] = report
    opt_report = graph.optimize(solver_config)
    return opt_report, reports
