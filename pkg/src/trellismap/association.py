"""Deferred data association: per-track buffering, field-of-view exit
commitment, MAD outlier rejection, median initialization and class-aware
spatial merging into the graph."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .factors import BearingRangeFactor, cartesian_to_bearing_range
from .geometry import Pose
from .graph import FactorGraph, Key, landmark_key
from .perception import CameraModel, LandmarkObservation

log = logging.getLogger(__name__)

MAD_GAUSSIAN_SCALE = 1.4826


@dataclass(frozen=True)
class BufferRecord:
    pose_key: Key
    bearing_range: object
    confidence: float
    world_position: np.ndarray
    cls: str
    t: float


@dataclass
class TrackBuffer:
    track_id: int
    records: list[BufferRecord] = field(default_factory=list)
    last_seen: float = -np.inf
    oov_streak: int = 0

    def positions(self) -> np.ndarray:
        return np.vstack([r.world_position for r in self.records])

    def majority_class(self) -> str:
        counts = Counter(r.cls for r in self.records)
        # Deterministic tie-break by class name.
        return sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[0][0]


@dataclass
class Landmark:
    key: Key
    cls: str
    support: int = 0
    marginal: np.ndarray | None = None


def buffer_observation(
    buffers: dict[int, TrackBuffer],
    obs: LandmarkObservation,
    pose_key: Key,
    current_pose: Pose,
    extrinsic: Pose,
    sigma_xyz: np.ndarray,
) -> TrackBuffer:
    """Append one observation to its track's buffer (creating it on first
    sighting) instead of inserting it into the graph immediately."""
    buf = buffers.get(obs.track_id)
    if buf is None:
        buf = TrackBuffer(track_id=obs.track_id)
        buffers[obs.track_id] = buf
    elif buf.records and buf.records[0].cls != obs.cls:
        log.warning(
            "track %d reported as %s after %s; keeping majority class at commit",
            obs.track_id,
            obs.cls,
            buf.records[0].cls,
        )
    world = current_pose.apply(extrinsic.apply(obs.point))
    buf.records.append(
        BufferRecord(
            pose_key=pose_key,
            bearing_range=cartesian_to_bearing_range(obs.point, sigma_xyz),
            confidence=obs.confidence,
            world_position=world,
            cls=obs.cls,
            t=obs.t,
        )
    )
    buf.last_seen = obs.t
    buf.oov_streak = 0
    return buf


def should_commit(
    buffer: TrackBuffer,
    current_pose: Pose,
    camera: CameraModel,
    now: float,
    n_exit: int = 3,
    t_stale: float = 3.0,
) -> bool:
    """True once the buffered landmark has left the sensor field of view for
    n_exit consecutive keyframes, or the track has gone stale.

    Call once per keyframe: the out-of-view streak is updated here.
    """
    if not buffer.records:
        return False
    med = np.median(buffer.positions(), axis=0)
    if camera.sees(current_pose, med):
        buffer.oov_streak = 0
    else:
        buffer.oov_streak += 1
    if buffer.oov_streak >= n_exit:
        return True
    return now - buffer.last_seen > t_stale


def mad_filter(positions, lambda_mad: float = 1.5, eps_mad: float = 0.05) -> np.ndarray:
    """Inlier indices by normalized deviation from the component-wise median.

    Deviations are Euclidean distances to the median; their median (floored
    at eps_mad to survive zero-spread buffers) scales the Gaussian-consistent
    score d / (1.4826 * MAD), thresholded at lambda_mad.
    """
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    if positions.shape[0] == 0:
        raise ValueError("mad_filter needs at least one position")
    med = np.median(positions, axis=0)
    dists = np.linalg.norm(positions - med, axis=1)
    mad = max(float(np.median(dists)), eps_mad)
    scores = dists / (MAD_GAUSSIAN_SCALE * mad)
    return np.flatnonzero(scores <= lambda_mad)


def initial_position(inlier_positions) -> np.ndarray:
    positions = np.atleast_2d(np.asarray(inlier_positions, dtype=float))
    if positions.shape[0] == 0:
        raise ValueError("empty inlier set")
    return np.median(positions, axis=0)


def find_merge_target(
    position,
    cls: str,
    landmarks: dict[Key, Landmark],
    graph: FactorGraph,
    d_merge_by_class: dict[str, float],
) -> Key | None:
    """Nearest existing same-class landmark within the class merge radius,
    by horizontal (xy) distance; ties break toward the lower key index."""
    position = np.asarray(position, dtype=float)
    best: tuple[float, int] | None = None
    best_key = None
    for key in sorted(landmarks, key=lambda k: k.index):
        lm = landmarks[key]
        if lm.cls != cls:
            continue
        dist = float(np.linalg.norm(graph.estimate(key)[:2] - position[:2]))
        if dist < d_merge_by_class[cls] and (best is None or dist < best[0]):
            best = (dist, key.index)
            best_key = key
    return best_key


@dataclass
class CommitResult:
    key: Key | None
    created: bool
    num_factors: int
    num_outliers: int


def commit(
    buffers: dict[int, TrackBuffer],
    graph: FactorGraph,
    landmarks: dict[Key, Landmark],
    track_id: int,
    extrinsic: Pose,
    d_merge_by_class: dict[str, float],
    lambda_mad: float = 1.5,
    eps_mad: float = 0.05,
) -> CommitResult:
    """Flush one track buffer into the graph.

    MAD-filter the buffered world positions, initialize at the inlier
    median, then either redirect all inlier factors to a same-class merge
    target or create a fresh landmark variable.
    """
    buf = buffers.pop(track_id)
    if not buf.records:
        return CommitResult(None, False, 0, 0)
    inliers = mad_filter(buf.positions(), lambda_mad, eps_mad)
    n_outliers = len(buf.records) - len(inliers)
    if len(inliers) == 0:
        return CommitResult(None, False, 0, n_outliers)
    records = [buf.records[i] for i in inliers]
    pos0 = initial_position(np.vstack([r.world_position for r in records]))
    cls = buf.majority_class()

    key = find_merge_target(pos0, cls, landmarks, graph, d_merge_by_class)
    created = key is None
    if created:
        key = landmark_key(len(landmarks), cls)
        graph.add_variable(key, pos0)
        landmarks[key] = Landmark(key=key, cls=cls)
    for rec in records:
        graph.add_factor(BearingRangeFactor(rec.pose_key, key, rec.bearing_range, extrinsic))
    landmarks[key].support += len(records)
    return CommitResult(key, created, len(records), n_outliers)
