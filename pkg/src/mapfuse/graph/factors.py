"""Factor residuals and their linearisations.

Keyframe poses ``T`` map body coordinates to the merged world frame and are
perturbed on the left, ``T <- exp(xi) T`` with ``xi = (omega, v)``.

Between and loop factors: ``r = Log(Z^-1 T_a^-1 T_b)``.

Scan-matching factors: for correspondences ``c = (p^i, p^j)``,
``d_c = p^j - T_j^-1 T_i p^i`` with weight ``W_c = (S^j + R S^i R^T)^-1``, where
``R`` is the rotation of ``T_j^-1 T_i``; the factor cost is
``scale * sum_c d_c^T W_c d_c``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ParameterError
from ..geometry import PointCloud, Pose, SpatialIndex
from ..geometry.se3 import ad, adjoint, hat, se3_log


def se3_right_jacobian_inv(xi):
    """Second-order series ``I + ad/2 + ad^2/12``."""
    A = ad(xi)
    return np.eye(6) + 0.5 * A + A @ A / 12.0


def between_residual(T_a: Pose, T_b: Pose, Z: Pose):
    E = np.linalg.inv(Z.matrix) @ np.linalg.inv(T_a.matrix) @ T_b.matrix
    return se3_log(E)


def between_jacobians(T_a: Pose, T_b: Pose, r):
    """``(dr/dxi_a, dr/dxi_b)`` for left perturbations of both poses."""
    J_b = se3_right_jacobian_inv(r) @ adjoint(np.linalg.inv(T_b.matrix))
    return -J_b, J_b


@dataclass(frozen=True, eq=False)
class PoseFactor:
    """Relative-pose constraint ``T_a^-1 T_b ~ Z`` between two graph nodes."""

    node_a: tuple
    node_b: tuple
    measurement: Pose
    information: np.ndarray
    kind: str = "between"

    def cost(self, poses):
        r = between_residual(poses[self.node_a], poses[self.node_b], self.measurement)
        return float(r @ self.information @ r)


class ScanCloud:
    """Keyframe cloud with GICP covariances and a cached NN index."""

    def __init__(self, cloud: PointCloud):
        if cloud.covariances is None:
            raise ParameterError("scan-matching clouds need per-point covariances")
        self.points = cloud.points
        self.covariances = cloud.covariances
        self._index = None

    @property
    def index(self):
        if self._index is None:
            self._index = SpatialIndex(self.points)
        return self._index

    def __len__(self):
        return len(self.points)


@dataclass(eq=False)
class ScanMatchFactor:
    node_i: tuple
    node_j: tuple
    cloud_i: ScanCloud
    cloud_j: ScanCloud
    scale: float = 0.01
    gate: float = 1.0
    correspondences: tuple | None = field(default=None, repr=False)   # (src idx, dst idx)

    def __post_init__(self):
        if self.node_i[0] == self.node_j[0]:
            raise ParameterError("scan-matching factors join keyframes of different sessions")
        if not self.scale > 0:
            raise ParameterError(f"scan factor scale must be positive, got {self.scale}")

    @property
    def pair(self):
        return tuple(sorted((self.node_i, self.node_j)))

    def associate(self, T_i: Pose, T_j: Pose):
        """Refresh correspondences by nearest neighbour at the current poses."""
        rel = T_j.inverse() @ T_i
        nn, dist = self.cloud_j.index.nearest(rel.apply(self.cloud_i.points))
        keep = np.flatnonzero(dist <= self.gate)
        self.correspondences = (keep, nn[keep])
        return self.correspondences

    def _terms(self, T_i: Pose, T_j: Pose, corr=None):
        src, dst = self.correspondences if corr is None else corr
        Rj_t = T_j.rotation.T
        x = T_i.apply(self.cloud_i.points[src])                     # world
        p_i_in_j = (x - T_j.translation) @ Rj_t.T
        d = self.cloud_j.points[dst] - p_i_in_j
        R = Rj_t @ T_i.rotation
        W = np.linalg.inv(self.cloud_j.covariances[dst] + R @ self.cloud_i.covariances[src] @ R.T)
        return x, d, W, Rj_t

    def cost(self, T_i: Pose, T_j: Pose, corr=None):
        _, d, W, _ = self._terms(T_i, T_j, corr)
        return self.scale * float(np.einsum("ni,nij,nj->", d, W, d))

    def jacobians(self, T_i: Pose, T_j: Pose, corr=None):
        """Per-correspondence ``A_c = dd/dxi_i`` and ``B_c = dd/dxi_j``, each (n, 3, 6)."""
        x, _, _, Rj_t = self._terms(T_i, T_j, corr)
        A = Rj_t @ np.concatenate([hat(x), np.broadcast_to(-np.eye(3), (len(x), 3, 3))], axis=2)
        return A, -A


@dataclass(frozen=True, eq=False)
class ScanLinearization:
    H_ii: np.ndarray
    H_ij: np.ndarray
    H_jj: np.ndarray
    b_i: np.ndarray
    b_j: np.ndarray
    residual: float          # scaled cost at the linearisation point
    n_correspondences: int

    @property
    def empty(self):
        return self.n_correspondences == 0


def linearize_scan_match(factor: ScanMatchFactor, T_i: Pose, T_j: Pose, refresh: bool = True) -> ScanLinearization:
    """Hessian blocks and gradient vectors of one scan-matching factor.

    ``H_ii = s sum A^T W A``, ``H_ij = s sum A^T W B``, ``H_jj = s sum B^T W B``,
    ``b_i = s sum A^T W d``, ``b_j = s sum B^T W d``. With no correspondences
    every block is zero.
    """
    if refresh or factor.correspondences is None:
        factor.associate(T_i, T_j)
    n = len(factor.correspondences[0])
    if n == 0:
        z6, z66 = np.zeros(6), np.zeros((6, 6))
        return ScanLinearization(z66, z66.copy(), z66.copy(), z6, z6.copy(), 0.0, 0)
    x, d, W, Rj_t = factor._terms(T_i, T_j)
    A = Rj_t @ np.concatenate([hat(x), np.broadcast_to(-np.eye(3), (n, 3, 3))], axis=2)
    WA = W @ A
    s = factor.scale
    H_ii = s * np.einsum("nki,nkj->ij", A, WA)
    Wd = np.einsum("nij,nj->ni", W, d)
    b_i = s * np.einsum("nki,nk->i", A, Wd)
    cost = s * float(np.einsum("ni,ni->", d, Wd))
    # B = -A, so the remaining blocks follow by sign
    return ScanLinearization(H_ii, -H_ii, H_ii.copy(), b_i, -b_i, cost, n)
