"""Rotation/pose primitives, unit-sphere tangent bases, and WGS84 <-> ENU conversion.

Conventions used throughout the package:

- Rotations map body-frame vectors into the world (ENU) frame.
- Translations are meters in ENU.
- Angles are radians everywhere; geodetic latitude/longitude are degrees.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# WGS84 ellipsoid constants.
WGS84_A = 6378137.0
WGS84_F = 1.0 / 298.257223563
WGS84_E2 = WGS84_F * (2.0 - WGS84_F)

_SMALL_ANGLE = 1e-8
# Unit quaternions drift under repeated products; renormalize after this many
# compositions rather than on every product.
_RENORM_OPS = 100


def skew(v) -> np.ndarray:
    """Cross-product matrix: skew(a) @ b == cross(a, b)."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


class Rotation:
    """3D rotation stored as a unit quaternion (w, x, y, z)."""

    __slots__ = ("_q", "_ops", "_mat")

    def __init__(self, quat, _ops: int = 0):
        q = np.asarray(quat, dtype=float)
        if q.shape != (4,):
            raise ValueError("quaternion must have 4 components")
        if _ops == 0:
            n = np.linalg.norm(q)
            if n < 1e-12:
                raise ValueError("zero quaternion")
            q = q / n
        self._q = q
        self._ops = _ops
        self._mat = None

    @classmethod
    def identity(cls) -> "Rotation":
        return cls(np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def from_matrix(cls, m) -> "Rotation":
        m = np.asarray(m, dtype=float)
        # Shepperd's method: pick the largest diagonal combination for stability.
        tr = np.trace(m)
        if tr > 0:
            s = np.sqrt(tr + 1.0) * 2.0
            q = np.array(
                [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
            )
        elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
            s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
            q = np.array(
                [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
            )
        elif m[1, 1] > m[2, 2]:
            s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
            q = np.array(
                [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
            )
        else:
            s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
            q = np.array(
                [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
            )
        return cls(q)

    @classmethod
    def from_rpy(cls, roll: float, pitch: float, yaw: float) -> "Rotation":
        """Z-Y-X (yaw-pitch-roll) Euler composition: R = Rz(yaw) Ry(pitch) Rx(roll)."""
        return cls.from_yaw(yaw) @ cls._about_axis(1, pitch) @ cls._about_axis(0, roll)

    @classmethod
    def from_yaw(cls, yaw: float) -> "Rotation":
        return cls._about_axis(2, yaw)

    @classmethod
    def _about_axis(cls, axis: int, angle: float) -> "Rotation":
        q = np.zeros(4)
        q[0] = np.cos(0.5 * angle)
        q[1 + axis] = np.sin(0.5 * angle)
        return cls(q)

    @property
    def quaternion(self) -> np.ndarray:
        return self._q.copy()

    @property
    def matrix(self) -> np.ndarray:
        if self._mat is None:
            w, x, y, z = self._q
            self._mat = np.array(
                [
                    [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                    [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                    [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
                ]
            )
        return self._mat

    def apply(self, v) -> np.ndarray:
        """Rotate one (3,) vector or a stack (N, 3)."""
        v = np.asarray(v, dtype=float)
        if v.ndim == 1:
            return self.matrix @ v
        return v @ self.matrix.T

    def __matmul__(self, other: "Rotation") -> "Rotation":
        w1, x1, y1, z1 = self._q
        w2, x2, y2, z2 = other._q
        q = np.array(
            [
                w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
                w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
                w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
                w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
            ]
        )
        ops = self._ops + other._ops + 1
        if ops > _RENORM_OPS:
            return Rotation(q, _ops=0)
        return Rotation(q, _ops=ops)

    def inverse(self) -> "Rotation":
        w, x, y, z = self._q
        return Rotation(np.array([w, -x, -y, -z]), _ops=self._ops)

    def rpy(self) -> tuple[float, float, float]:
        """Roll, pitch, yaw of the Z-Y-X Euler decomposition."""
        m = self.matrix
        pitch = -np.arcsin(np.clip(m[2, 0], -1.0, 1.0))
        roll = np.arctan2(m[2, 1], m[2, 2])
        yaw = np.arctan2(m[1, 0], m[0, 0])
        return float(roll), float(pitch), float(yaw)

    def __repr__(self) -> str:
        return f"Rotation(quat={np.array2string(self._q, precision=6)})"


def so3_exp(omega) -> Rotation:
    """Exponential map so(3) -> SO(3) via the quaternion form of Rodrigues."""
    omega = np.asarray(omega, dtype=float)
    angle = np.linalg.norm(omega)
    if angle < _SMALL_ANGLE:
        # Second-order Taylor of cos(a/2) and sin(a/2)/a.
        w = 1.0 - angle * angle / 8.0
        xyz = (0.5 - angle * angle / 48.0) * omega
    else:
        w = np.cos(0.5 * angle)
        xyz = np.sin(0.5 * angle) / angle * omega
    return Rotation(np.array([w, xyz[0], xyz[1], xyz[2]]), _ops=1)


def so3_log(rotation: Rotation) -> np.ndarray:
    """Logarithm map SO(3) -> so(3); principal branch, |result| <= pi."""
    q = rotation._q
    if q[0] < 0:
        q = -q
    w = q[0]
    v = q[1:]
    n = np.linalg.norm(v)
    if n < _SMALL_ANGLE:
        return (2.0 / w) * (1.0 - n * n / (3.0 * w * w)) * v
    angle = 2.0 * np.arctan2(n, w)
    return (angle / n) * v


def so3_right_jacobian(omega) -> np.ndarray:
    """Right Jacobian of the exponential: Exp(w + dw) ~ Exp(w) Exp(Jr(w) dw)."""
    omega = np.asarray(omega, dtype=float)
    angle = np.linalg.norm(omega)
    s = skew(omega)
    if angle < 1e-6:
        return np.eye(3) - 0.5 * s + (1.0 / 6.0) * s @ s
    a2 = angle * angle
    return (
        np.eye(3)
        - (1.0 - np.cos(angle)) / a2 * s
        + (angle - np.sin(angle)) / (a2 * angle) * s @ s
    )


def so3_right_jacobian_inv(omega) -> np.ndarray:
    omega = np.asarray(omega, dtype=float)
    angle = np.linalg.norm(omega)
    s = skew(omega)
    if angle < 1e-6:
        return np.eye(3) + 0.5 * s + (1.0 / 12.0) * s @ s
    a2 = angle * angle
    coeff = 1.0 / a2 - (1.0 + np.cos(angle)) / (2.0 * angle * np.sin(angle))
    return np.eye(3) + 0.5 * s + coeff * s @ s


@dataclass(frozen=True)
class Pose:
    """Rigid transform: p_world = rotation @ p_body + translation."""

    rotation: Rotation
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(Rotation.identity(), np.zeros(3))

    def __matmul__(self, other: "Pose") -> "Pose":
        return Pose(
            self.rotation @ other.rotation,
            self.rotation.apply(other.translation) + self.translation,
        )

    def inverse(self) -> "Pose":
        rinv = self.rotation.inverse()
        return Pose(rinv, -rinv.apply(self.translation))

    def apply(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return self.rotation.apply(p) + self.translation

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation.matrix
        m[:3, 3] = self.translation
        return m


def tangent_basis(u) -> np.ndarray:
    """Orthonormal 3x2 basis of the plane orthogonal to the unit vector u.

    Built from a Householder reflector anchored at +/-e_z, so the result is a
    deterministic function of u and well conditioned on the whole sphere.
    """
    u = np.asarray(u, dtype=float)
    n = np.linalg.norm(u)
    if n < 1e-9:
        raise ValueError("tangent basis undefined for the zero vector")
    u = u / n
    v = u.copy()
    v[2] += 1.0 if u[2] >= 0 else -1.0
    h = np.eye(3) - (2.0 / (v @ v)) * np.outer(v, v)
    return h[:, :2]


@dataclass(frozen=True)
class GeodeticDatum:
    """ENU origin: geodetic latitude/longitude in degrees, altitude in meters."""

    latitude: float
    longitude: float
    altitude: float

    def __post_init__(self):
        if not (abs(self.latitude) <= 90.0 and abs(self.longitude) <= 180.0):
            raise ValueError("datum latitude/longitude out of range")


def geodetic_to_ecef(lat_deg: float, lon_deg: float, alt: float) -> np.ndarray:
    lat = np.radians(lat_deg)
    lon = np.radians(lon_deg)
    sin_lat = np.sin(lat)
    n = WGS84_A / np.sqrt(1.0 - WGS84_E2 * sin_lat * sin_lat)
    x = (n + alt) * np.cos(lat) * np.cos(lon)
    y = (n + alt) * np.cos(lat) * np.sin(lon)
    z = (n * (1.0 - WGS84_E2) + alt) * sin_lat
    return np.array([x, y, z])


def ecef_to_geodetic(ecef) -> tuple[float, float, float]:
    x, y, z = np.asarray(ecef, dtype=float)
    lon = np.arctan2(y, x)
    p = np.hypot(x, y)
    # Bowring's start, then a few fixed-point refinements (converges to < 1e-9 m).
    lat = np.arctan2(z, p * (1.0 - WGS84_E2))
    for _ in range(6):
        sin_lat = np.sin(lat)
        n = WGS84_A / np.sqrt(1.0 - WGS84_E2 * sin_lat * sin_lat)
        lat = np.arctan2(z + WGS84_E2 * n * sin_lat, p)
    sin_lat = np.sin(lat)
    n = WGS84_A / np.sqrt(1.0 - WGS84_E2 * sin_lat * sin_lat)
    cos_lat = np.cos(lat)
    if abs(cos_lat) > 1e-10:
        alt = p / cos_lat - n
    else:
        alt = abs(z) - n * (1.0 - WGS84_E2)
    return float(np.degrees(lat)), float(np.degrees(lon)), float(alt)


def _enu_rotation(datum: GeodeticDatum) -> np.ndarray:
    """Rows are the east/north/up unit vectors expressed in ECEF."""
    lat = np.radians(datum.latitude)
    lon = np.radians(datum.longitude)
    sl, cl = np.sin(lat), np.cos(lat)
    so, co = np.sin(lon), np.cos(lon)
    return np.array(
        [
            [-so, co, 0.0],
            [-sl * co, -sl * so, cl],
            [cl * co, cl * so, sl],
        ]
    )


def geodetic_to_enu(lat_deg: float, lon_deg: float, alt: float, datum: GeodeticDatum) -> np.ndarray:
    d_ecef = geodetic_to_ecef(lat_deg, lon_deg, alt) - geodetic_to_ecef(
        datum.latitude, datum.longitude, datum.altitude
    )
    return _enu_rotation(datum) @ d_ecef


def enu_to_geodetic(enu, datum: GeodeticDatum) -> tuple[float, float, float]:
    ecef = geodetic_to_ecef(datum.latitude, datum.longitude, datum.altitude)
    ecef = ecef + _enu_rotation(datum).T @ np.asarray(enu, dtype=float)
    return ecef_to_geodetic(ecef)
