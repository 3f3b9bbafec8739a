"""Rigid-body geometry: SE(3) poses, twists, and Euler decompositions."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Orthonormality drift beyond this triggers re-orthonormalization.
ORTHO_TOL = 1e-9

GIMBAL_TOL_DEG = 1e-6


def hat(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix such that hat(v) @ w == cross(v, w)."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def orthonormalize(rotation: np.ndarray) -> np.ndarray:
    """Project a near-rotation matrix back onto SO(3) (polar decomposition)."""
    u, _, vt = np.linalg.svd(rotation)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] = -u[:, -1]
        r = u @ vt
    return r


def _ortho_drift(rotation: np.ndarray) -> float:
    return float(np.abs(rotation.T @ rotation - np.eye(3)).max())


@dataclass(frozen=True)
class Pose:
    """Rigid transform: p_out = rotation @ p + translation (meters)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not (np.isfinite(r).all() and np.isfinite(t).all()):
            raise ValueError("pose contains non-finite entries")
        if np.linalg.det(r) < 0:
            raise ValueError("rotation has negative determinant (reflection)")
        if _ortho_drift(r) > ORTHO_TOL:
            r = orthonormalize(r)
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    @staticmethod
    def from_matrix(m: np.ndarray) -> "Pose":
        m = np.asarray(m, dtype=float)
        return Pose(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def compose(self, other: "Pose") -> "Pose":
        """self applied after other: result(p) = self(other(p))."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Apply to a single 3-vector or an (N, 3) array of points."""
        points = np.asarray(points, dtype=float)
        if points.ndim == 1:
            return self.rotation @ points + self.translation
        return points @ self.rotation.T + self.translation


@dataclass(frozen=True)
class Twist:
    """Tangent-space increment: axis-angle rotation (rad) and translation (m)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.array(self.rotation, dtype=float).reshape(3))
        object.__setattr__(self, "translation", np.array(self.translation, dtype=float).reshape(3))

    @staticmethod
    def zero() -> "Twist":
        return Twist(np.zeros(3), np.zeros(3))

    def norms(self) -> tuple[float, float]:
        """(rotation norm in radians, translation norm in meters)."""
        return float(np.linalg.norm(self.rotation)), float(np.linalg.norm(self.translation))


@dataclass(frozen=True)
class EulerAngles:
    """Intrinsic Z-Y-X decomposition (yaw, pitch, roll), degrees."""

    yaw: float
    pitch: float
    roll: float
    gimbal_lock: bool = field(default=False, compare=False)

    def as_array(self) -> np.ndarray:
        return np.array([self.yaw, self.pitch, self.roll])


def exp_twist(x: Twist) -> Pose:
    """SE(3) exponential of a twist, including the rotation/translation coupling.

    Uses the closed-form Rodrigues terms away from zero and their series
    expansions below theta ~ 1e-8 where the quotients lose precision.
    """
    omega = x.rotation
    theta = np.linalg.norm(omega)
    k = hat(omega)
    k2 = k @ k
    if theta < 1e-8:
        a = 1.0 - theta**2 / 6.0          # sin(t)/t
        b = 0.5 - theta**2 / 24.0         # (1-cos(t))/t^2
        c = 1.0 / 6.0 - theta**2 / 120.0  # (t-sin(t))/t^3
    else:
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / theta**2
        c = (theta - np.sin(theta)) / theta**3
    rotation = np.eye(3) + a * k + b * k2
    v = np.eye(3) + b * k + c * k2
    return Pose(rotation, v @ x.translation)


def rotation_angle(rotation: np.ndarray) -> float:
    """Geodesic rotation angle in radians."""
    c = (np.trace(rotation) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def rotation_to_euler(rotation: np.ndarray) -> EulerAngles:
    """Decompose R = Rz(yaw) @ Ry(pitch) @ Rx(roll); angles in degrees.

    Flags gimbal lock when |pitch| is within GIMBAL_TOL_DEG of 90 degrees;
    there the yaw/roll split is not unique and roll is pinned to zero.
    """
    r = np.asarray(rotation, dtype=float)
    sp = -r[2, 0]
    pitch = np.degrees(np.arcsin(np.clip(sp, -1.0, 1.0)))
    if 90.0 - abs(pitch) < GIMBAL_TOL_DEG:
        yaw = np.degrees(np.arctan2(-r[0, 1], r[1, 1]))
        return EulerAngles(float(yaw), float(pitch), 0.0, gimbal_lock=True)
    yaw = np.degrees(np.arctan2(r[1, 0], r[0, 0]))
    roll = np.degrees(np.arctan2(r[2, 1], r[2, 2]))
    return EulerAngles(float(yaw), float(pitch), float(roll))


def euler_to_rotation(e: EulerAngles) -> np.ndarray:
    """Rebuild the rotation matrix from intrinsic Z-Y-X angles in degrees."""
    return rot_z(np.radians(e.yaw)) @ rot_y(np.radians(e.pitch)) @ rot_x(np.radians(e.roll))


def rot_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
