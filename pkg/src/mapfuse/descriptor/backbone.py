"""Hierarchical point encoder/decoder.

Each encoder stage voxelizes the previous level at twice the leaf, averages
the previous level's features over a ``2.5 * leaf`` ball around every new
point, optionally appends rotation-invariant shape statistics of that ball,
and applies a linear map plus leaky ReLU. The decoder walks back up to the
first downsampled level by nearest-neighbour feature copy, skip concatenation
and a linear map.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from ..errors import InsufficientDensityError, ParameterError
from ..geometry import PointCloud, SpatialIndex, voxel_downsample
from .weights import WeightBundle

RADIUS_FACTOR = 2.5
LEAKY_SLOPE = 0.1
MIN_STAGE_POINTS = 4


def leaky_relu(x):
    return np.where(x > 0, x, LEAKY_SLOPE * x)


@dataclass(frozen=True, eq=False)
class Hierarchy:
    levels: list            # points per level, level 0 = input
    features: list          # encoder features per level
    dense_points: np.ndarray
    dense_features: np.ndarray

    @property
    def sparse_points(self):
        return self.levels[-1]

    @property
    def sparse_features(self):
        return self.features[-1]


def _ball_matrix(source, targets, radius):
    """0/1 (len(targets), len(source)) ball membership matrix and row counts."""
    lists = SpatialIndex(source).radius_lists(targets, radius)
    counts = np.fromiter((len(l) for l in lists), dtype=np.int64, count=len(lists))
    cols = np.fromiter((j for l in lists for j in sorted(l)), dtype=np.int64, count=int(counts.sum()))
    rows = np.repeat(np.arange(len(targets)), counts)
    A = sparse.csr_matrix((np.ones(len(cols)), (rows, cols)), shape=(len(targets), len(source)))
    return A, counts


def shape_statistics(source, targets, radius, A=None, counts=None):
    """Five rotation-invariant descriptors of each ``radius`` ball.

    linearity, planarity, scattering (eigenvalue ratios of the neighbour
    covariance), log point count and mean neighbour distance / radius.
    """
    if A is None:
        A, counts = _ball_matrix(source, targets, radius)
    stats = np.zeros((len(targets), 5))
    # moments about the query point keep the subtraction well conditioned
    rows = np.repeat(np.arange(len(targets)), np.diff(A.indptr))
    rel = source[A.indices] - targets[rows]
    inv = 1.0 / np.maximum(counts, 1)
    w = inv[rows][:, None]
    mean = np.zeros((len(targets), 3))
    np.add.at(mean, rows, w * rel)
    second = np.zeros((len(targets), 9))
    np.add.at(second, rows, w * (rel[:, :, None] * rel[:, None, :]).reshape(-1, 9))
    cov = second.reshape(-1, 3, 3) - mean[:, :, None] * mean[:, None, :]
    ev = np.linalg.eigvalsh(0.5 * (cov + np.swapaxes(cov, 1, 2)))[:, ::-1]
    ev = np.maximum(ev, 0.0)
    l1 = ev[:, 0]
    ok = l1 > 1e-12 * radius * radius
    safe = np.where(ok, l1, 1.0)
    stats[:, 0] = np.where(ok, (ev[:, 0] - ev[:, 1]) / safe, 0.0)
    stats[:, 1] = np.where(ok, (ev[:, 1] - ev[:, 2]) / safe, 0.0)
    stats[:, 2] = np.where(ok, ev[:, 2] / safe, 0.0)
    stats[:, 3] = np.log1p(counts) / 5.0
    dist = np.zeros(len(targets))
    np.add.at(dist, rows, np.linalg.norm(rel, axis=1))
    stats[:, 4] = dist * inv / radius
    return stats


def encode_stage(prev_points, prev_features, points, radius, weight, bias, geometric_stats=True):
    """One encoder stage: ball mean of previous features (+ stats) -> linear -> leaky ReLU."""
    A, counts = _ball_matrix(prev_points, points, radius)
    x = (A @ prev_features) / np.maximum(counts, 1)[:, None]
    if geometric_stats:
        x = np.hstack([x, shape_statistics(prev_points, points, radius, A, counts)])
    return leaky_relu(x @ weight + bias)


def encode_hierarchy(cloud, weights: WeightBundle, stages: int | None = None,
                     base_leaf: float = 0.3) -> Hierarchy:
    """Run the encoder/decoder on a cloud already voxelized at ``base_leaf``."""
    arch = weights.arch
    stages = arch.stages if stages is None else stages
    if stages != arch.stages:
        raise ParameterError(f"weights define {arch.stages} stages, {stages} requested")
    if stages < 2:
        raise ParameterError("need at least 2 encoder stages")
    points = np.asarray(getattr(cloud, "points", cloud), dtype=float)
    if len(points) < MIN_STAGE_POINTS:
        raise InsufficientDensityError(f"input has {len(points)} points (< {MIN_STAGE_POINTS})")

    levels, feats = [], []
    prev_pts, prev_feat = points, np.ones((len(points), 1))
    for s in range(stages):
        leaf = base_leaf * 2**s
        pts = points if s == 0 else voxel_downsample(PointCloud(levels[-1]), leaf).points
        if len(pts) < MIN_STAGE_POINTS:
            raise InsufficientDensityError(
                f"stage {s} (leaf {leaf:g} m) produced {len(pts)} points (< {MIN_STAGE_POINTS})")
        W, b = weights.layer(f"enc.{s}")
        f = encode_stage(prev_pts, prev_feat, pts, RADIUS_FACTOR * leaf, W, b, arch.geometric_stats)
        levels.append(pts)
        feats.append(f)
        prev_pts, prev_feat = pts, f

    up = feats[-1]
    for s in range(stages - 2, 0, -1):
        nn, _ = SpatialIndex(levels[s + 1]).nearest(levels[s])
        W, b = weights.layer(f"dec.{s}")
        up = np.hstack([up[nn], feats[s]]) @ W + b
    return Hierarchy(levels, feats, levels[1], up)
