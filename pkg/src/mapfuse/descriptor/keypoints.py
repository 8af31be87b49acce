"""Keypoint detection by soft-weighted aggregation of dense neighbours."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InsufficientDensityError
from ..geometry import SpatialIndex
from .backbone import Hierarchy, leaky_relu
from .weights import WeightBundle


@dataclass(frozen=True, eq=False)
class KeypointResult:
    keypoints: np.ndarray      # (n, 3)
    descriptors: np.ndarray    # (n, dim), before attention
    weights: np.ndarray        # (n, k) softmax weights
    neighbors: np.ndarray      # (n, k) indices into the dense points


def softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _side_sign(proj):
    """+1/-1 per row: the side with more points, then the third moment as tie-break."""
    votes = np.sign(proj).sum(axis=1)
    skew = np.sum(proj**3, axis=1)
    s = np.where(votes != 0, np.sign(votes), np.sign(skew))
    return np.where(s == 0, 1.0, s)


def local_frames(rel):
    """Sign-disambiguated eigenbasis of each neighbour group, (n, 3, 3) column frames.

    Axes are ordered by decreasing spread; the first two point towards the
    side holding more of the neighbours and the third completes a right-handed
    frame, so the frame rotates with the cloud.
    """
    cov = np.einsum("nki,nkj->nij", rel, rel) / rel.shape[1]
    _, vecs = np.linalg.eigh(cov)
    e1, e2 = vecs[:, :, 2], vecs[:, :, 1]
    e1 = e1 * _side_sign(np.einsum("nki,ni->nk", rel, e1))[:, None]
    e2 = e2 * _side_sign(np.einsum("nki,ni->nk", rel, e2))[:, None]
    return np.stack([e1, e2, np.cross(e1, e2)], axis=2)


def score_mlp(x, weights: WeightBundle):
    n_layers = len(weights.arch.keypoint_hidden)
    for i in range(n_layers):
        W, b = weights.layer(f"kp.score.{i}")
        x = x @ W + b
        if i < n_layers - 1:
            x = leaky_relu(x)
    return x


def select_neighbors(sparse_pts, dense_pts, k, dilation=False, seed=0):
    """Indices of ``k`` dense neighbours per sparse point out of the ``2k`` nearest."""
    if len(dense_pts) < 2 * k:
        raise InsufficientDensityError(
            f"keypoint grouping needs {2 * k} dense points, have {len(dense_pts)}")
    idx, _ = SpatialIndex(dense_pts).knn(sparse_pts, 2 * k)
    if not dilation:
        return idx[:, :k]
    rng = np.random.default_rng(seed)
    pick = np.sort(np.argsort(rng.random(idx.shape), axis=1)[:, :k], axis=1)
    return np.take_along_axis(idx, pick, axis=1)


def detect_keypoints(hierarchy: Hierarchy, weights: WeightBundle, k: int = 64,
                     dilation: bool = False, seed: int = 0) -> KeypointResult:
    sparse_pts, sparse_feat = hierarchy.sparse_points, hierarchy.sparse_features
    dense_pts, dense_feat = hierarchy.dense_points, hierarchy.dense_features
    nb = select_neighbors(sparse_pts, dense_pts, k, dilation, seed)

    rel = dense_pts[nb] - sparse_pts[:, None, :]                       # (n, k, 3)
    local = np.einsum("nki,nij->nkj", rel, local_frames(rel))
    dist = np.linalg.norm(rel, axis=2, keepdims=True)
    x = np.concatenate([dense_feat[nb], local, dist], axis=2)          # (n, k, d+4)
    logits = score_mlp(x, weights).max(axis=2)                         # channel max-pool
    w = softmax(logits, axis=1)

    keypoints = np.einsum("nk,nki->ni", w, dense_pts[nb])
    pooled = np.einsum("nk,nkc->nc", w, dense_feat[nb])
    W0, b0 = weights.layer("kp.desc.0")
    W1, b1 = weights.layer("kp.desc.1")
    desc = leaky_relu(np.hstack([sparse_feat, pooled]) @ W0 + b0) @ W1 + b1
    return KeypointResult(keypoints, desc, w, nb)
