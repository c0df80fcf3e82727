"""Geometric detection front-end over detection logs.

Operates on per-frame detections whose masks are carried as sampled
(pixel u, pixel v, depth z) triplets: confidence/class filtering, per-class
non-maximum suppression, pinhole back-projection with a depth validity
window, and robust reference-point extraction from the base of the cloud.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Pose, Rotation

CLASS_TRUNK = "trunk"
CLASS_POLE = "pole"
CLASS_BY_CODE = {0: CLASS_TRUNK, 1: CLASS_POLE}
CODE_BY_CLASS = {name: code for code, name in CLASS_BY_CODE.items()}


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def project(self, points) -> np.ndarray:
        """Camera-frame points (N, 3) or (3,) to pixel/depth (u, v, z)."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        uvz = np.column_stack(
            [
                self.fx * p[:, 0] / p[:, 2] + self.cx,
                self.fy * p[:, 1] / p[:, 2] + self.cy,
                p[:, 2],
            ]
        )
        return uvz[0] if np.asarray(points).ndim == 1 else uvz

    def contains(self, u, v) -> np.ndarray:
        return (u >= 0) & (u <= self.width - 1) & (v >= 0) & (v <= self.height - 1)


@dataclass(frozen=True)
class Detection:
    t: float
    track_id: int
    cls: str
    confidence: float
    bbox: np.ndarray  # (u_min, v_min, u_max, v_max)
    samples: np.ndarray  # (N, 3) of (u, v, z)

    def __post_init__(self):
        object.__setattr__(self, "bbox", np.asarray(self.bbox, dtype=float))
        object.__setattr__(
            self, "samples", np.asarray(self.samples, dtype=float).reshape(-1, 3)
        )


@dataclass(frozen=True)
class LandmarkObservation:
    """Camera-frame reference point of one detection."""

    point: np.ndarray
    cls: str
    confidence: float
    track_id: int
    num_points: int
    t: float

    def __post_init__(self):
        object.__setattr__(self, "point", np.asarray(self.point, dtype=float))


def bbox_iou(a, b) -> float:
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    iw = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    if inter == 0.0:
        return 0.0
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / union


def filter_detections(detections, theta_conf, allowed_classes, theta_iou):
    """Confidence/class gate followed by greedy per-class NMS on boxes.

    Survivors are returned in (class, descending confidence, track id) order,
    which makes the operation idempotent and deterministic.
    """
    kept = [d for d in detections if d.confidence >= theta_conf and d.cls in allowed_classes]
    out = []
    for cls in sorted({d.cls for d in kept}):
        group = sorted(
            (d for d in kept if d.cls == cls), key=lambda d: (-d.confidence, d.track_id)
        )
        survivors = []
        for det in group:
            if all(bbox_iou(det.bbox, s.bbox) < theta_iou for s in survivors):
                survivors.append(det)
        out.extend(survivors)
    return out


def backproject(det: Detection, intrinsics: CameraIntrinsics, z_min, z_max, n_min):
    """Pinhole back-projection of the sampled mask into the camera frame.

    Samples with non-finite or out-of-range depth are dropped; detections
    keeping fewer than n_min points are rejected (returns None).
    """
    s = det.samples
    finite = np.all(np.isfinite(s), axis=1)
    valid = finite & (s[:, 2] >= z_min) & (s[:, 2] <= z_max)
    s = s[valid]
    if s.shape[0] < n_min:
        return None
    z = s[:, 2]
    return np.column_stack(
        [(s[:, 0] - intrinsics.cx) * z / intrinsics.fx, (s[:, 1] - intrinsics.cy) * z / intrinsics.fy, z]
    )


def reference_point(cloud) -> np.ndarray:
    """Hybrid mean-median reference point of a camera-frame cloud.

    The base subset is the quarter of the points with the largest y
    (camera y points down, so these are the physically lowest). Lateral
    coordinates are averaged; depth takes the median for robustness to
    heavy-tailed depth errors.
    """
    cloud = np.asarray(cloud, dtype=float)
    n = cloud.shape[0]
    if n < 4:
        raise ValueError("reference point needs at least 4 points")
    k = max(1, int(np.ceil(n / 4)))
    order = np.argsort(cloud[:, 1], kind="stable")
    base = cloud[order[n - k :]]
    return np.array([np.mean(base[:, 0]), np.mean(base[:, 1]), np.median(base[:, 2])])


def centroid(cloud) -> np.ndarray:
    """Plain full-cloud mean on all axes (the no-reference-point baseline)."""
    return np.mean(np.asarray(cloud, dtype=float), axis=0)


def make_observation(
    det: Detection,
    intrinsics: CameraIntrinsics,
    z_min: float,
    z_max: float,
    n_min: int,
    use_reference_point: bool = True,
) -> LandmarkObservation | None:
    cloud = backproject(det, intrinsics, z_min, z_max, n_min)
    if cloud is None or cloud.shape[0] < 4:
        return None
    point = reference_point(cloud) if use_reference_point else centroid(cloud)
    return LandmarkObservation(
        point=point,
        cls=det.cls,
        confidence=det.confidence,
        track_id=det.track_id,
        num_points=cloud.shape[0],
        t=det.t,
    )


# Camera axes expressed in the body frame for a forward-looking mount:
# camera x (right) = -body y, camera y (down) = -body z, camera z (optical) = body x.
FRONT_MOUNT = Rotation.from_matrix(
    np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])
)


@dataclass(frozen=True)
class CameraModel:
    """Intrinsics plus mounting and the admissible depth window.

    The same model decides detection visibility in the simulator and the
    field-of-view exit test used for landmark commitment.
    """

    intrinsics: CameraIntrinsics
    extrinsic: Pose  # camera in body
    z_min: float
    z_max: float

    @classmethod
    def front_mount(cls, intrinsics, translation, z_min, z_max, mount_yaw: float = 0.0):
        rot = Rotation.from_yaw(mount_yaw) @ FRONT_MOUNT
        return cls(intrinsics, Pose(rot, np.asarray(translation, dtype=float)), z_min, z_max)

    def camera_point(self, body_pose_world: Pose, p_world) -> np.ndarray:
        return self.extrinsic.inverse().apply(body_pose_world.inverse().apply(p_world))

    def sees(self, body_pose_world: Pose, p_world) -> bool:
        p_c = self.camera_point(body_pose_world, p_world)
        if not (self.z_min <= p_c[2] <= self.z_max):
            return False
        u, v, _ = self.intrinsics.project(p_c)
        return bool(self.intrinsics.contains(u, v))
