"""Rigid-body transforms and rotation representations.

Conventions:
    - Rotations are 3x3 float arrays.
    - A pose ``(R, t)`` maps a point ``x`` to ``R @ x + t``.
    - Euler angles are intrinsic Z-Y-X: ``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.spatial.transform import Rotation as _ScipyRotation

GIMBAL_EPS = 1e-12


def wrap_angle(a):
    """Wrap angle(s) into (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w <= -np.pi, w + 2.0 * np.pi, w)
    return float(w) if np.ndim(w) == 0 else w


class EulerAngles(NamedTuple):
    roll: float
    pitch: float
    yaw: float


def rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_from_euler(e) -> np.ndarray:
    roll, pitch, yaw = e
    return rot_z(yaw) @ rot_y(pitch) @ rot_x(roll)


def euler_from_rotation(r: np.ndarray) -> EulerAngles:
    """Inverse of :func:`rotation_from_euler`.

    At gimbal lock (|pitch| = pi/2) roll is set to 0 and yaw absorbs the
    remaining rotation about the vertical axis.
    """
    r = np.asarray(r, dtype=float)
    cp = math.hypot(r[0, 0], r[1, 0])
    pitch = math.atan2(-r[2, 0], cp)
    if cp < GIMBAL_EPS:
        roll = 0.0
        yaw = math.atan2(-r[0, 1], r[1, 1])
    else:
        roll = math.atan2(r[2, 1], r[2, 2])
        yaw = math.atan2(r[1, 0], r[0, 0])
    return EulerAngles(wrap_angle(roll), pitch, wrap_angle(yaw))


def rotation_angle(r: np.ndarray) -> float:
    """Geodesic angle of a rotation matrix, radians in [0, pi]."""
    c = 0.5 * (np.trace(r) - 1.0)
    return math.acos(min(1.0, max(-1.0, c)))


def random_rotation(seed) -> np.ndarray:
    """Uniform rotation from a normalized 4-d Gaussian sample.

    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    return quat_to_matrix(q)


def quat_to_matrix(q) -> np.ndarray:
    """Quaternion ``(qx, qy, qz, qw)`` to rotation matrix."""
    return _ScipyRotation.from_quat(np.asarray(q, dtype=float)).as_matrix()


def matrix_to_quat(r: np.ndarray) -> np.ndarray:
    """Rotation matrix to quaternion ``(qx, qy, qz, qw)`` with ``qw >= 0``."""
    q = _ScipyRotation.from_matrix(np.asarray(r, dtype=float)).as_quat()
    return -q if q[3] < 0 else q


def is_rotation(r: np.ndarray, tol: float = 1e-9) -> bool:
    r = np.asarray(r, dtype=float)
    return (r.shape == (3, 3)
            and np.allclose(r @ r.T, np.eye(3), atol=tol)
            and abs(np.linalg.det(r) - 1.0) <= tol)


@dataclass(frozen=True, eq=False)
class RelativePose:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))

    @classmethod
    def identity(cls) -> "RelativePose":
        return cls()

    @classmethod
    def from_matrix(cls, m) -> "RelativePose":
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "RelativePose":
        return inverse(self)

    def __matmul__(self, other: "RelativePose") -> "RelativePose":
        return compose(self, other)

    def allclose(self, other: "RelativePose", atol: float = 1e-9) -> bool:
        return (np.allclose(self.rotation, other.rotation, atol=atol)
                and np.allclose(self.translation, other.translation, atol=atol))

    def __repr__(self) -> str:
        e = euler_from_rotation(self.rotation)
        return (f"RelativePose(rpy=({e.roll:.6g}, {e.pitch:.6g}, {e.yaw:.6g}), "
                f"t={np.array2string(self.translation, precision=6)})")


def compose(a: RelativePose, b: RelativePose) -> RelativePose:
    return RelativePose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def inverse(p: RelativePose) -> RelativePose:
    rt = p.rotation.T
    return RelativePose(rt, -rt @ p.translation)


def apply(p: RelativePose, x) -> np.ndarray:
    """Apply to a 3-vector or an (N, 3) array of points."""
    x = np.asarray(x, dtype=float)
    return x @ p.rotation.T + p.translation


def random_pose(seed, translation_scale: float = 1.0) -> RelativePose:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    r = random_rotation(rng)
    return RelativePose(r, translation_scale * rng.standard_normal(3))
