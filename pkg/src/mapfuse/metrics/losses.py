"""Training losses with analytic gradients: circle, transformation and Chamfer.

Nothing here trains a network. The losses exist so that their gradients can be
checked against finite differences and reused by a future training port.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist
from scipy.special import expit, logsumexp

from ..errors import ParameterError
from ..geometry import Pose


@dataclass(frozen=True, eq=False)
class PatchOverlap:
    """Local patches around two keypoint sets and their pairwise overlap ratios.

    Attributes:
        patches_p: dense point indices of each patch of P (P's own frame).
        patches_q: same for Q.
        overlap: ``(m, n)`` ratios in [0, 1]; ``overlap[i, j]`` couples P keypoint i
            with Q keypoint j.
        radius: patch radius.
    """

    patches_p: list
    patches_q: list
    overlap: np.ndarray
    radius: float

    def positives(self, threshold: float = 0.1) -> np.ndarray:
        return self.overlap >= threshold


def _directed_fraction(a: np.ndarray, tree: cKDTree, leaf: float) -> float:
    if len(a) == 0:
        return 0.0
    d, _ = tree.query(a, k=1, distance_upper_bound=leaf * (1 + 1e-12))
    return float(np.mean(d <= leaf))


def patch_overlap(points_p, keypoints_p, points_q, keypoints_q, pose: Pose,
                  radius: float = 0.9, leaf: float = 0.3) -> PatchOverlap:
    """Overlap ratio between every P patch and every Q patch after ground-truth alignment.

    ``pose`` maps P coordinates into Q's frame. The ratio for a pair is the smaller of
    the two directed fractions of patch points that have a partner in the other patch
    within ``leaf``, so swapping the roles of P and Q transposes the matrix.
    """
    if radius <= 0 or leaf <= 0:
        raise ParameterError("patch radius and leaf must be positive")
    points_p = np.asarray(points_p, float).reshape(-1, 3)
    points_q = np.asarray(points_q, float).reshape(-1, 3)
    kp_p = np.asarray(keypoints_p, float).reshape(-1, 3)
    kp_q = np.asarray(keypoints_q, float).reshape(-1, 3)
    patches_p = cKDTree(points_p).query_ball_point(kp_p, radius, return_sorted=True) if len(kp_p) else []
    patches_q = cKDTree(points_q).query_ball_point(kp_q, radius, return_sorted=True) if len(kp_q) else []
    moved_p = pose.apply(points_p)
    moved_kp = pose.apply(kp_p)
    overlap = np.zeros((len(kp_p), len(kp_q)))
    trees_q = {}
    # patches further apart than two radii plus the leaf cannot share points
    near = cKDTree(kp_q).query_ball_point(moved_kp, 2 * radius + leaf) if len(kp_q) and len(kp_p) else []
    for i, cand in enumerate(near):
        pi = moved_p[patches_p[i]]
        if len(pi) == 0:
            continue
        tree_i = cKDTree(pi)
        for j in cand:
            qj = points_q[patches_q[j]]
            if len(qj) == 0:
                continue
            if j not in trees_q:
                trees_q[j] = cKDTree(qj)
            overlap[i, j] = min(_directed_fraction(pi, trees_q[j], leaf), _directed_fraction(qj, tree_i, leaf))
    return PatchOverlap([np.asarray(p, int) for p in patches_p], [np.asarray(p, int) for p in patches_q],
                        overlap, float(radius))


def _circle_direction(F, G, overlap, gamma, pos_margin, neg_margin, pos_threshold):
    """One-sided loss over anchors in F, with gradients for F and G."""
    diff = F[:, None, :] - G[None, :, :]
    d = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    pos = overlap >= pos_threshold
    neg = ~pos
    valid = pos.any(axis=1)
    gF, gG = np.zeros_like(F), np.zeros_like(G)
    n = int(valid.sum())
    if n == 0:
        return 0.0, gF, gG
    a = np.where(pos, gamma * (d - pos_margin) ** 2 * np.sqrt(np.where(pos, overlap, 0.0)), -np.inf)
    b = np.where(neg, gamma * (neg_margin - d) ** 2, -np.inf)
    la = logsumexp(a, axis=1)
    lb = logsumexp(b, axis=1) if neg.any() else np.full(len(F), -np.inf)
    s = la + lb
    per_anchor = np.logaddexp(0.0, s)
    loss = float(per_anchor[valid].sum() / n)

    # d loss / d s = sigmoid(s); softmax weights inside each log-sum-exp
    sig = np.where(valid & np.isfinite(s), expit(s), 0.0) / n
    with np.errstate(invalid="ignore"):
        wa = np.where(pos, np.exp(a - la[:, None]), 0.0)
        wb = np.where(neg & np.isfinite(lb)[:, None], np.exp(b - lb[:, None]), 0.0)
    dd = sig[:, None] * (wa * 2 * gamma * (d - pos_margin) * np.sqrt(np.where(pos, overlap, 0.0))
                         - wb * 2 * gamma * (neg_margin - d))
    unit = np.divide(diff, d[..., None], out=np.zeros_like(diff), where=d[..., None] > 0)
    contrib = dd[..., None] * unit
    gF = contrib.sum(axis=1)
    gG = -contrib.sum(axis=0)
    return loss, gF, gG


def circle_loss(F, G, overlap, gamma: float = 10.0, pos_margin: float = 0.1, neg_margin: float = 1.4,
                pos_threshold: float = 0.1):
    """Overlap-weighted circle loss, averaged over both matching directions.

    Args:
        F: ``(m, d)`` descriptors of P.
        G: ``(n, d)`` descriptors of Q.
        overlap: ``(m, n)`` patch overlap ratios; a pair is positive when its ratio
            reaches ``pos_threshold`` and negative otherwise.

    Returns:
        ``(loss, grad_F, grad_G)``. Anchors without any positive are skipped and each
        direction is normalised by the number of remaining anchors.
    """
    F = np.asarray(F, float)
    G = np.asarray(G, float)
    overlap = np.asarray(overlap, float)
    if F.ndim != 2 or G.ndim != 2 or F.shape[1] != G.shape[1]:
        raise ParameterError(f"descriptor shapes {F.shape} and {G.shape} do not match")
    if overlap.shape != (len(F), len(G)):
        raise ParameterError(f"overlap must be {(len(F), len(G))}, got {overlap.shape}")
    if np.any(overlap < 0) or np.any(overlap > 1):
        raise ParameterError("overlap ratios must lie in [0, 1]")
    if gamma <= 0:
        raise ParameterError("gamma must be positive")
    lp, gFp, gGp = _circle_direction(F, G, overlap, gamma, pos_margin, neg_margin, pos_threshold)
    lq, gGq, gFq = _circle_direction(G, F, overlap.T, gamma, pos_margin, neg_margin, pos_threshold)
    return 0.5 * (lp + lq), 0.5 * (gFp + gFq), 0.5 * (gGp + gGq)


def transformation_loss(estimate: Pose, truth: Pose, points) -> float:
    """Mean squared displacement of the points under the difference of the two poses."""
    P = np.asarray(getattr(points, "points", points), float).reshape(-1, 3)
    if len(P) == 0:
        raise ParameterError("transformation loss needs at least one point")
    D = truth.matrix - estimate.matrix
    r = P @ D[:3, :3].T + D[:3, 3]
    return float(np.mean(np.einsum("ij,ij->i", r, r)))


def chamfer_loss(P, Q) -> float:
    """Half the mean nearest squared distance from P to Q plus half the reverse."""
    P = np.asarray(P, float).reshape(-1, 3)
    Q = np.asarray(Q, float).reshape(-1, 3)
    if len(P) == 0 or len(Q) == 0:
        raise ParameterError("chamfer loss needs two non-empty point sets")
    D = cdist(P, Q, "sqeuclidean")
    return float(0.5 * D.min(axis=1).mean() + 0.5 * D.min(axis=0).mean())


def total_loss(circle: float, transformation: float, chamfer: float,
               weights: tuple[float, float, float] = (1.0, 1.0, 1.0)) -> float:
    return weights[0] * circle + weights[1] * transformation + weights[2] * chamfer
