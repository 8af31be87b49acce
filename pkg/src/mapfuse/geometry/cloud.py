"""Point clouds, voxel filtering and local covariance estimation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateNeighborhoodError, EmptyInputError, ParameterError
from .index import SpatialIndex
from .se3 import Pose

PSD_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Ordered 3-D points in meters, optionally with per-point covariances."""

    points: np.ndarray
    frame_id: int = 0
    covariances: np.ndarray | None = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ParameterError("point coordinates must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.covariances is not None:
            cov = np.array(self.covariances, dtype=float)
            if cov.shape != (len(pts), 3, 3):
                raise ParameterError(
                    f"expected {len(pts)} covariances of shape 3x3, got {cov.shape}")
            if len(cov):
                if np.abs(cov - np.swapaxes(cov, 1, 2)).max() > PSD_TOL:
                    raise ParameterError("covariances must be symmetric")
                if np.linalg.eigvalsh(cov).min() < -PSD_TOL:
                    raise ParameterError("covariances must be positive semi-definite")
            cov.setflags(write=False)
            object.__setattr__(self, "covariances", cov)

    def __len__(self):
        return len(self.points)

    def with_covariances(self, covariances):
        return PointCloud(self.points, self.frame_id, covariances)


def voxel_downsample(cloud: PointCloud, leaf: float) -> PointCloud:
    """One centroid per occupied voxel of edge ``leaf``.

    Output is ordered by voxel key, so it does not depend on the order of the
    input points (up to floating-point summation order).
    """
    if not leaf > 0:
        raise ParameterError(f"voxel leaf must be positive, got {leaf}")
    if len(cloud) == 0:
        raise EmptyInputError("cannot voxelize an empty cloud")
    pts = cloud.points
    keys = np.floor(pts / leaf).astype(np.int64)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    sums = np.zeros((len(counts), 3))
    # sort first so each centroid is summed in a permutation-independent order
    order = np.lexsort((pts[:, 2], pts[:, 1], pts[:, 0], inverse))
    np.add.at(sums, inverse[order], pts[order])
    return PointCloud(sums / counts[:, None], cloud.frame_id)


def transform_cloud(cloud: PointCloud, pose: Pose) -> PointCloud:
    pts = pose.apply(cloud.points)
    cov = None
    if cloud.covariances is not None:
        R = pose.rotation
        cov = R @ cloud.covariances @ R.T
        cov = 0.5 * (cov + np.swapaxes(cov, 1, 2))
    return PointCloud(pts, cloud.frame_id, cov)


def canonical_normal(n):
    """Flip ``n`` so its largest-magnitude component is positive."""
    n = np.asarray(n, dtype=float)
    pick = np.argmax(np.abs(n), axis=-1)
    sign = np.sign(np.take_along_axis(n, pick[..., None], axis=-1))
    sign[sign == 0] = 1.0
    return n * sign


def _neighbourhood_stats(points, idx):
    nb = points[idx]                                  # (M, k, 3)
    k = idx.shape[1]
    centred = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("mki,mkj->mij", centred, centred) / (k - 1)
    return 0.5 * (cov + np.swapaxes(cov, 1, 2))


def local_covariances_normals(points, idx):
    """Covariances/normals of given neighbour index rows, plus a rank<2 mask."""
    cov = _neighbourhood_stats(points, idx)
    evals, evecs = np.linalg.eigh(cov)
    scale = np.maximum(evals[:, 2], 1e-300)
    degenerate = (evals[:, 2] <= 0) | (evals[:, 1] <= 1e-12 * scale)
    return cov, canonical_normal(evecs[:, :, 0]), degenerate


def estimate_covariances_normals(cloud: PointCloud, index: SpatialIndex, queries, k: int = 20):
    """Vectorised covariance/normal estimation for many query points.

    Returns ``(covariances (M,3,3), normals (M,3))``. The covariance is the
    unbiased sample covariance of the ``k`` nearest points; the normal is the
    eigenvector of its smallest eigenvalue, sign-canonicalised.
    """
    if k < 3:
        raise DegenerateNeighborhoodError("need at least 3 neighbours for a covariance")
    if len(cloud) < k:
        raise DegenerateNeighborhoodError(f"cloud has {len(cloud)} points, fewer than k={k}")
    queries = np.atleast_2d(np.asarray(queries, dtype=float))
    idx, _ = index.knn(queries, k)
    cov, normals, degenerate = local_covariances_normals(cloud.points, idx)
    if np.any(degenerate):
        raise DegenerateNeighborhoodError(
            f"{int(degenerate.sum())} neighbourhood(s) have rank < 2 covariance")
    return cov, normals


def estimate_covariance_normal(cloud: PointCloud, index: SpatialIndex, query, k: int = 20):
    """Covariance of the ``k`` nearest neighbours of ``query`` and its unit normal."""
    cov, normals = estimate_covariances_normals(cloud, index, np.asarray(query)[None, :], k)
    return cov[0], normals[0]


def plane_regularized_covariances(cloud: PointCloud, k: int = 20, eps: float = 1e-3,
                                  index: SpatialIndex | None = None):
    """GICP-style covariances: local eigenbasis with eigenvalues ``(eps, 1, 1)``.

    Neighbourhoods too degenerate for a normal fall back to an isotropic
    covariance so registration never aborts on a few stray points.
    """
    index = index or SpatialIndex(cloud.points)
    k = min(k, len(cloud))
    if k < 3:
        raise DegenerateNeighborhoodError("need at least 3 points for covariances")
    idx, _ = index.knn(cloud.points, k)
    cov = _neighbourhood_stats(cloud.points, idx)
    evals, evecs = np.linalg.eigh(cov)
    out = np.einsum("mij,j,mkj->mik", evecs, np.array([eps, 1.0, 1.0]), evecs)
    bad = evals[:, 1] <= 1e-12 * np.maximum(evals[:, 2], 1e-300)
    out[bad] = np.eye(3)
    return 0.5 * (out + np.swapaxes(out, 1, 2))


def with_gicp_covariances(cloud: PointCloud, k: int = 20, eps: float = 1e-3) -> PointCloud:
    return cloud.with_covariances(plane_regularized_covariances(cloud, k, eps))
