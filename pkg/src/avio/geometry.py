"""Rotation and rigid-transform helpers.

Rotations are plain 3x3 numpy arrays. The error-state convention used
everywhere in the filter is the left-multiplicative perturbation

    R = Exp(dtheta) @ R_hat

and :func:`perturb` is the only place that convention is written down.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation as _ScipyRotation

from .errors import AngleNearPi

SMALL_ANGLE = 1e-8
ORTHO_TOL = 1e-9


def skew(v) -> np.ndarray:
    """Cross-product matrix: ``skew(v) @ w == np.cross(v, w)``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(m: np.ndarray) -> np.ndarray:
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def exp_so3(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    angle = float(np.linalg.norm(theta))
    K = skew(theta)
    if angle < SMALL_ANGLE:
        return np.eye(3) + K + 0.5 * K @ K
    a = np.sin(angle) / angle
    b = (1.0 - np.cos(angle)) / angle**2
    return np.eye(3) + a * K + b * K @ K


def log_so3(R: np.ndarray) -> np.ndarray:
    """Principal rotation vector of ``R``.

    Raises
    ------
    AngleNearPi
        If the rotation angle is within ~1e-3 rad of pi, where the axis
        cannot be recovered reliably from the antisymmetric part.
    """
    tr = float(np.trace(R))
    if tr <= -1.0 + 1e-6:
        raise AngleNearPi(f"rotation angle too close to pi (trace={tr:.9f})")
    w = 0.5 * vee(R - R.T)
    s = float(np.linalg.norm(w))
    c = 0.5 * (tr - 1.0)
    angle = np.arctan2(s, c)
    if angle < SMALL_ANGLE:
        return w * (1.0 + angle**2 / 6.0)
    return w * (angle / s)


def rotation_drift(R: np.ndarray) -> float:
    return float(np.linalg.norm(R @ R.T - np.eye(3)))


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Nearest rotation in the Frobenius sense (polar decomposition)."""
    U, _, Vt = np.linalg.svd(R)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def perturb(R: np.ndarray, dtheta) -> np.ndarray:
    """Apply a left perturbation, ``Exp(dtheta) @ R``."""
    out = exp_so3(dtheta) @ R
    if rotation_drift(out) > ORTHO_TOL:
        out = orthonormalize(out)
    return out


def rotation_difference(R_a: np.ndarray, R_b: np.ndarray) -> np.ndarray:
    """Left difference: the ``dtheta`` with ``perturb(R_b, dtheta) == R_a``."""
    return log_so3(R_a @ R_b.T)


def rotation_angle(R: np.ndarray) -> float:
    c = np.clip(0.5 * (np.trace(R) - 1.0), -1.0, 1.0)
    return float(np.arccos(c))


def quat_from_matrix(R: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) with non-negative w."""
    x, y, z, w = _ScipyRotation.from_matrix(R).as_quat()
    q = np.array([w, x, y, z])
    return q if w >= 0 else -q


def matrix_from_quat(q) -> np.ndarray:
    w, x, y, z = q
    return _ScipyRotation.from_quat([x, y, z, w]).as_matrix()


def rpy_to_matrix(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Z-Y-X Euler angles to a world-from-body rotation."""
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    return np.array(
        [
            [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
            [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
            [-sp, cp * sr, cp * cr],
        ]
    )


@dataclass
class Transform:
    """Rigid transform ``x_a = rotation @ x_b + translation`` (frame a from b)."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.rotation = np.array(self.rotation, dtype=float)
        self.translation = np.array(self.translation, dtype=float)

    @classmethod
    def identity(cls) -> "Transform":
        return cls()

    @classmethod
    def from_rotvec(cls, rotvec, translation) -> "Transform":
        return cls(exp_so3(rotvec), translation)

    def compose(self, other: "Transform") -> "Transform":
        return Transform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    __matmul__ = compose

    def inverse(self) -> "Transform":
        Rt = self.rotation.T
        return Transform(Rt, -Rt @ self.translation)

    def apply(self, x) -> np.ndarray:
        return self.rotation @ np.asarray(x, dtype=float) + self.translation

    def copy(self) -> "Transform":
        return Transform(self.rotation.copy(), self.translation.copy())

    def allclose(self, other: "Transform", atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, atol=atol)
            and np.allclose(self.translation, other.translation, atol=atol)
        )
