"""SE(3) utilities.

Tangent vectors are ordered ``(rotation, translation)``, i.e. ``xi = (w, v)``.
Updates are applied on the left: ``T <- exp(xi) @ T``. This fixes the column
layout of every Jacobian in the package.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from ..errors import ParameterError

_ORTHO_TOL = 1e-9


def hat(w):
    """Skew-symmetric matrix of ``w`` (works on stacks of vectors)."""
    w = np.asarray(w, dtype=float)
    out = np.zeros(w.shape[:-1] + (3, 3))
    out[..., 0, 1] = -w[..., 2]
    out[..., 0, 2] = w[..., 1]
    out[..., 1, 0] = w[..., 2]
    out[..., 1, 2] = -w[..., 0]
    out[..., 2, 0] = -w[..., 1]
    out[..., 2, 1] = w[..., 0]
    return out


def vee(W):
    W = np.asarray(W, dtype=float)
    return np.stack([W[..., 2, 1], W[..., 0, 2], W[..., 1, 0]], axis=-1)


def so3_exp(w):
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w)
    K = hat(w)
    if theta < 1e-8:
        return np.eye(3) + K + 0.5 * K @ K
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + a * K + b * K @ K


def so3_log(R):
    return Rotation.from_matrix(np.asarray(R, dtype=float)).as_rotvec()


def _left_jacobian_terms(theta):
    if theta < 1e-5:
        t2 = theta * theta
        return 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0
    return (1.0 - np.cos(theta)) / theta**2, (theta - np.sin(theta)) / theta**3


def so3_left_jacobian(w):
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w)
    K = hat(w)
    b, c = _left_jacobian_terms(theta)
    return np.eye(3) + b * K + c * K @ K


def so3_left_jacobian_inv(w):
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w)
    K = hat(w)
    if theta < 1e-5:
        coef = 1.0 / 12.0 + theta**2 / 720.0
    else:
        coef = (1.0 - theta * np.sin(theta) / (2.0 * (1.0 - np.cos(theta)))) / theta**2
    return np.eye(3) - 0.5 * K + coef * K @ K


def se3_exp(xi):
    """4x4 matrix exponential of the twist ``xi = (w, v)``."""
    xi = np.asarray(xi, dtype=float)
    w, v = xi[:3], xi[3:]
    T = np.eye(4)
    T[:3, :3] = so3_exp(w)
    T[:3, 3] = so3_left_jacobian(w) @ v
    return T


def se3_log(T):
    T = np.asarray(T, dtype=float)
    w = so3_log(T[:3, :3])
    v = so3_left_jacobian_inv(w) @ T[:3, 3]
    return np.concatenate([w, v])


def adjoint(T):
    """Adjoint of a 4x4 transform in (rotation, translation) tangent order."""
    T = np.asarray(T, dtype=float)
    R, t = T[:3, :3], T[:3, 3]
    A = np.zeros((6, 6))
    A[:3, :3] = R
    A[3:, 3:] = R
    A[3:, :3] = hat(t) @ R
    return A


def ad(xi):
    xi = np.asarray(xi, dtype=float)
    A = np.zeros((6, 6))
    A[:3, :3] = hat(xi[:3])
    A[3:, 3:] = hat(xi[:3])
    A[3:, :3] = hat(xi[3:])
    return A


def rotation_angle(R):
    """Geodesic angle of a rotation matrix, accurate near 0 and near pi.

    Mathematically equal to ``arccos((trace(R) - 1) / 2)``.
    """
    R = np.asarray(R, dtype=float)
    s = 0.5 * np.linalg.norm(vee(R - np.swapaxes(R, -1, -2)), axis=-1)
    c = 0.5 * (np.trace(R, axis1=-2, axis2=-1) - 1.0)
    return np.arctan2(s, c)


def _check_rotation(R):
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        raise ParameterError("rotation must be a finite 3x3 matrix")
    if np.abs(R.T @ R - np.eye(3)).max() > _ORTHO_TOL:
        raise ParameterError("rotation is not orthonormal within 1e-9")
    if abs(np.linalg.det(R) - 1.0) > _ORTHO_TOL:
        raise ParameterError("rotation determinant is not +1")


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform ``p -> R p + t``.

    ``covariance`` is an optional 6x6 matrix in tangent order (rotation,
    translation).
    """

    rotation: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    covariance: np.ndarray | None = None

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float)
        t = np.array(self.translation, dtype=float).reshape(3)
        _check_rotation(R)
        if not np.all(np.isfinite(t)):
            raise ParameterError("translation must be finite")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)
        if self.covariance is not None:
            C = np.array(self.covariance, dtype=float)
            if C.shape != (6, 6):
                raise ParameterError("pose covariance must be 6x6")
            C.setflags(write=False)
            object.__setattr__(self, "covariance", C)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, T, orthonormalize=False):
        T = np.asarray(T, dtype=float)
        R = T[:3, :3]
        if orthonormalize:
            U, _, Vt = np.linalg.svd(R)
            R = U @ np.diag([1.0, 1.0, np.linalg.det(U @ Vt)]) @ Vt
        return cls(R, T[:3, 3])

    @classmethod
    def exp(cls, xi):
        return cls.from_matrix(se3_exp(xi))

    @classmethod
    def from_quaternion(cls, translation, quat_xyzw, tol=1e-6):
        q = np.asarray(quat_xyzw, dtype=float)
        n = np.linalg.norm(q)
        if not np.isfinite(n) or abs(n - 1.0) > tol:
            raise ParameterError(f"quaternion norm {n:.9f} is not unit within {tol}")
        return cls(Rotation.from_quat(q / n).as_matrix(), translation)

    def quaternion(self):
        """Unit quaternion (x, y, z, w) with non-negative w."""
        q = Rotation.from_matrix(self.rotation).as_quat()
        return -q if q[3] < 0 else q

    @property
    def matrix(self):
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def inverse(self):
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def __matmul__(self, other):
        if isinstance(other, Pose):
            return Pose.from_matrix(self.matrix @ other.matrix, orthonormalize=True)
        return NotImplemented

    def apply(self, points):
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    def log(self):
        return se3_log(self.matrix)

    def retract(self, xi):
        """Left-multiplicative update ``exp(xi) @ self``."""
        return Pose.from_matrix(se3_exp(xi) @ self.matrix, orthonormalize=True)

    def angle(self):
        return float(rotation_angle(self.rotation))

    def __repr__(self):
        return f"Pose(t={np.round(self.translation, 6).tolist()}, angle={self.angle():.6g})"


def relative(a: Pose, b: Pose) -> Pose:
    """``a^{-1} b``: pose of ``b`` expressed in the frame of ``a``."""
    return a.inverse() @ b


def pose_error(estimate: Pose, truth: Pose):
    """(translation error in m, rotation error in rad)."""
    te = float(np.linalg.norm(estimate.translation - truth.translation))
    re = float(rotation_angle(truth.rotation.T @ estimate.rotation))
    return te, re


def random_pose(rng, max_angle=np.pi, max_translation=1.0):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, max_angle)
    t = rng.uniform(-1.0, 1.0, size=3)
    t *= rng.uniform(0.0, max_translation) / max(np.linalg.norm(t), 1e-12)
    return Pose(so3_exp(axis * angle), t)
