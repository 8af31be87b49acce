"""Keyframe overlap and placement of scan-matching factors."""
from __future__ import annotations

import numpy as np

from ..errors import DataError
from ..geometry import Pose
from .factors import ScanCloud, ScanMatchFactor


def _fraction_near(points_a, pose_ab: Pose, cloud_b: ScanCloud, radius):
    _, dist = cloud_b.index.nearest(pose_ab.apply(points_a))
    return float(np.mean(dist <= radius))


def _world_box(cloud: ScanCloud, pose: Pose):
    lo, hi = cloud.points.min(axis=0), cloud.points.max(axis=0)
    corners = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
    w = pose.apply(corners)
    return w.min(axis=0), w.max(axis=0)


def compute_overlap(cloud_a: ScanCloud, pose_a: Pose, cloud_b: ScanCloud, pose_b: Pose, radius: float = 0.45) -> float:
    """Smaller of the two directed fractions of points with a neighbour within ``radius``.

    Both clouds are placed in the common frame by their poses.
    """
    if len(cloud_a) == 0 or len(cloud_b) == 0:
        raise DataError("overlap of an empty cloud is undefined")
    lo_a, hi_a = _world_box(cloud_a, pose_a)
    lo_b, hi_b = _world_box(cloud_b, pose_b)
    if np.any(lo_a > hi_b + radius) or np.any(lo_b > hi_a + radius):
        return 0.0         # bounding boxes too far apart for any neighbour
    ab = pose_b.inverse() @ pose_a
    f_ab = _fraction_near(cloud_a.points, ab, cloud_b, radius)
    if f_ab == 0.0:
        return 0.0
    return min(f_ab, _fraction_near(cloud_b.points, ab.inverse(), cloud_a, radius))


def overlap_matrix(clouds: dict, poses: dict, radius: float = 0.45):
    """``{(node_a, node_b): overlap}`` over unordered cross-session node pairs (node_a < node_b)."""
    nodes = sorted(clouds)
    out = {}
    for x, a in enumerate(nodes):
        for b in nodes[x + 1:]:
            if a[0] != b[0]:
                out[(a, b)] = compute_overlap(clouds[a], poses[a], clouds[b], poses[b], radius)
    return out


def select_scan_pairs(overlaps: dict, nodes, min_overlap: float = 0.2, n_k: int = 3):
    """Per node keep the ``n_k`` best cross-session partners above ``min_overlap``; union, sorted."""
    partners = {n: [] for n in nodes}
    for (a, b), ov in overlaps.items():
        if ov > min_overlap:
            partners[a].append((-ov, b))
            partners[b].append((-ov, a))
    pairs = set()
    for n in nodes:
        for _, m in sorted(partners[n])[:n_k]:
            pairs.add(tuple(sorted((n, m))))
    return sorted(pairs)


def place_scan_match_factors(clouds: dict, poses: dict, min_overlap: float = 0.2, n_k: int = 3,
                             radius: float = 0.45, scale: float = 0.01, gate: float = 1.0):
    """Scan-matching factors between overlapping keyframes of different sessions.

    ``clouds`` and ``poses`` are keyed by node ``(session, kf_id)``; ``poses``
    should come from a preliminary optimisation with the loop closures.
    """
    overlaps = overlap_matrix(clouds, poses, radius)
    pairs = select_scan_pairs(overlaps, sorted(clouds), min_overlap, n_k)
    return [ScanMatchFactor(a, b, clouds[a], clouds[b], scale, gate) for a, b in pairs]
