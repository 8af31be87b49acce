"""Descriptor-space scan distance, loop candidate selection and correspondences."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from ..errors import ParameterError


def distance_matrix(F, G):
    """``D[i, j] = ||F_i - G_j||``, evaluated per pair so ``D(G, F) == D(F, G).T`` bitwise."""
    F = np.atleast_2d(np.asarray(F, dtype=float))
    G = np.atleast_2d(np.asarray(G, dtype=float))
    if F.shape[1] != G.shape[1]:
        raise ParameterError(f"descriptor dimensions differ: {F.shape[1]} vs {G.shape[1]}")
    D = cdist(F, G)
    if not np.all(np.isfinite(D)):
        raise ParameterError("descriptor distances must be finite")
    return D


def _check_s(s, size):
    if not 1 <= s <= size:
        raise ParameterError(f"s must lie in [1, {size}], got {s}")


def smallest_mean(D, s):
    """Mean of the ``s`` smallest entries, summed in sorted order."""
    flat = np.asarray(D, dtype=float).ravel()
    _check_s(s, flat.size)
    part = np.sort(np.partition(flat, s - 1)[:s]) if s < flat.size else np.sort(flat)
    return float(np.sum(part) / s)


def inter_scan_distance(F, G, s=256):
    """Average of the ``s`` smallest pairwise descriptor distances between two scans."""
    return smallest_mean(distance_matrix(F, G), s)


def scan_distances(query, candidates, s=256):
    """Inter-scan distance from ``query`` descriptors to each candidate's."""
    q = getattr(query, "descriptors", query)
    out = []
    for cand in candidates:
        g = getattr(cand, "descriptors", cand)
        out.append(inter_scan_distance(q, g, min(s, len(q) * len(g))))
    return np.array(out)


def detect_loop(query, candidates, threshold, s=256):
    """Index of the closest candidate if its distance is below ``threshold``, else None.

    ``s`` is capped at the size of each distance matrix so small scans still
    compare. Ties go to the lowest index.
    """
    if len(candidates) == 0:
        return None
    dist = scan_distances(query, candidates, s)
    best = int(np.argmin(dist))
    return best if dist[best] < threshold else None


@dataclass(frozen=True, eq=False)
class Correspondences:
    source_index: np.ndarray    # (s,) rows of the first descriptor set
    target_index: np.ndarray    # (s,) rows of the second
    distance: np.ndarray        # (s,) descriptor distance of each pair
    source: np.ndarray          # (s, 3) keypoints
    target: np.ndarray          # (s, 3)

    def __len__(self):
        return len(self.distance)


def select_correspondences(F, G, keypoints_p, keypoints_q, s=256) -> Correspondences:
    """The ``s`` globally smallest descriptor distances as keypoint pairs.

    Order is ascending distance, then ascending ``i``, then ``j``.
    """
    D = distance_matrix(F, G)
    _check_s(s, D.size)
    m, n = D.shape
    ii, jj = np.divmod(np.arange(D.size), n)
    order = np.lexsort((jj, ii, D.ravel()))[:s]
    i, j = ii[order], jj[order]
    kp = np.asarray(keypoints_p, dtype=float).reshape(-1, 3)
    kq = np.asarray(keypoints_q, dtype=float).reshape(-1, 3)
    if len(kp) != m or len(kq) != n:
        raise ParameterError("keypoint counts must match descriptor counts")
    return Correspondences(i, j, D.ravel()[order], kp[i], kq[j])
