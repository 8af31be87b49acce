"""Geometric self-attention over keypoint descriptors.

Pairwise geometry between keypoints enters the attention logits through four
sinusoidal embeddings: Mahalanobis distance, Euclidean distance, surface
normal angle and a triplet angle, each projected by its own matrix and summed.

The full ``(N, N, dim)`` embedding tensor is only materialised on request
(:meth:`GeometricEmbedding.dense`). Attention itself folds the projections
into the query side, so it never needs more than a row block of raw
sinusoids at a time.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ParameterError
from .keypoints import softmax
from .weights import WeightBundle

KINDS = ("mahalanobis", "euclidean", "normal", "triplet")
SINGULAR_REG = 1e-6
RAW_CACHE_BYTES = 1 << 30     # keep unprojected embeddings across layers up to this size


@dataclass(frozen=True)
class Betas:
    """Embedding sensitivities. Angles are in radians, so 1/15 deg is 1/radians(15)."""

    mahalanobis: float = 1.0 / 4.8
    euclidean: float = 1.0 / 4.8
    normal: float = 1.0 / np.radians(15.0)
    triplet: float = 1.0 / np.radians(15.0)


def _frequencies(beta, dim):
    if dim % 2:
        raise ParameterError(f"embedding dimension must be even, got {dim}")
    if not beta > 0:
        raise ParameterError(f"beta must be positive, got {beta}")
    return beta / 10000.0 ** (2.0 * np.arange(dim // 2) / dim)


def _sincos_halves(values, beta, dim, dtype=np.float64):
    """``[sin | cos]`` in two contiguous halves; channel order ``_HALF_ORDER``."""
    values = np.asarray(values, dtype=float)
    arg = np.multiply.outer(values.astype(dtype, copy=False), _frequencies(beta, dim).astype(dtype))
    half = dim // 2
    out = np.empty(values.shape + (dim,), dtype=dtype)
    np.sin(arg, out=out[..., :half])
    np.cos(arg, out=out[..., half:])
    return out


def _half_order(dim):
    """Interleaved channel index held by each position of the halves layout."""
    return np.concatenate([np.arange(0, dim, 2), np.arange(1, dim, 2)])


def sinusoidal_embed(values, beta, dim, dtype=np.float64):
    """Even channels ``sin(beta v / c_k)``, odd channels ``cos(beta v / c_k)``, ``c_k = 10000^(2k/dim)``.

    ``dtype`` sets the precision of the whole evaluation.
    """
    halves = _sincos_halves(values, beta, dim, dtype)
    out = np.empty_like(halves)
    out[..., _half_order(dim)] = halves
    return out


def _vector_angle(a, b):
    cross = np.linalg.norm(np.cross(a, b), axis=-1)
    return np.arctan2(cross, np.einsum("...i,...i->...", a, b))


def mahalanobis_matrix(points, covariances):
    """``(p_i - p_j)^T (S_i + S_j)^{-1} (p_i - p_j)``; singular sums get ``+1e-6 I``."""
    diff = points[:, None, :] - points[None, :, :]
    S = covariances[:, None, :, :] + covariances[None, :, :, :]
    ev = np.linalg.eigvalsh(S)
    singular = ev[..., 0] <= 1e-12 * np.maximum(ev[..., 2], 1e-300)
    if np.any(singular):
        S = S + singular[..., None, None] * (SINGULAR_REG * np.eye(3))
    sol = np.linalg.solve(S, diff[..., None])[..., 0]
    return np.einsum("ijc,ijc->ij", diff, sol)


def normal_angle_matrix(normals):
    """Angle between unsigned normals, in [0, pi/2].

    Computed as ``atan2(|n_i x n_j|, |n_i . n_j|)``, equal to
    ``arccos(clip(|n_i . n_j|, 0, 1))`` but accurate for near-parallel normals.
    """
    n = normals / np.linalg.norm(normals, axis=1, keepdims=True)
    dot = np.abs(n @ n.T)
    cross = np.linalg.norm(np.cross(n[:, None, :], n[None, :, :]), axis=2)
    return np.arctan2(cross, dot)


def triplet_angles(points, n_ref=3):
    """Angles between ``p_j - p_i`` and ``p_m - p_i`` for the ``n_ref`` nearest ``m`` of ``i``.

    Returns ``(N, N, n_ref)``; the angle is 0 where either vector vanishes.
    """
    N = len(points)
    n_ref = min(n_ref, N - 1)
    d2 = np.sum((points[:, None, :] - points[None, :, :]) ** 2, axis=2)
    np.fill_diagonal(d2, np.inf)
    order = np.lexsort((np.broadcast_to(np.arange(N), (N, N)), d2), axis=1)[:, :n_ref]
    to_j = points[None, :, :] - points[:, None, :]                   # (i, j, 3)
    to_m = points[order] - points[:, None, :]                        # (i, m, 3)
    return _vector_angle(to_j[:, :, None, :], to_m[:, None, :, :])


@dataclass(frozen=True, eq=False)
class GeometricEmbedding:
    """Scalar pairwise geometry plus the betas needed to embed it."""

    mahalanobis: np.ndarray    # (N, N)
    euclidean: np.ndarray      # (N, N)
    normal: np.ndarray         # (N, N)
    triplet: np.ndarray        # (N, N, m)
    betas: Betas
    dim: int
    dtype: type = np.float64   # sin/cos precision used by attention_bias
    _cache: dict = field(default_factory=dict, repr=False)

    def __len__(self):
        return len(self.euclidean)

    def raw(self, kind, rows=slice(None), dtype=np.float64, halves=False):
        """Unprojected embedding of ``kind`` for a row block.

        With ``halves`` the channels come in ``[sin | cos]`` order, see ``_half_order``.
        """
        beta = getattr(self.betas, kind)
        values = getattr(self, kind)[rows]
        if kind == "triplet" and values.shape[2] == 0:
            values = np.zeros(values.shape[:2] + (1,))
        fn = _sincos_halves if halves else sinusoidal_embed
        emb = fn(values, beta, self.dim, dtype)
        return emb.max(axis=2) if kind == "triplet" else emb

    def dense(self, weights: WeightBundle):
        """The projected ``(N, N, dim)`` embedding tensor."""
        return sum(self.raw(k) @ weights[f"embed.{k}"] for k in KINDS)

    def _stacked_raw(self):
        """All four raw embeddings side by side, computed once and reused by every layer."""
        if "raw" not in self._cache:
            N = len(self)
            out = np.empty((N, N, len(KINDS) * self.dim), dtype=self.dtype)
            for k, kind in enumerate(KINDS):
                out[:, :, k * self.dim:(k + 1) * self.dim] = self.raw(kind, dtype=self.dtype, halves=True)
            self._cache["raw"] = out
        return self._cache["raw"]

    def attention_bias(self, q, W_e, weights: WeightBundle):
        """``bias[i, j] = (eps_ij W_e) . q_i`` without forming ``eps``."""
        N = len(self)
        qe = q @ W_e.T
        order = _half_order(self.dim)
        proj = {kind: weights[f"embed.{kind}"][order] for kind in KINDS}
        if N * N * len(KINDS) * self.dim * np.dtype(self.dtype).itemsize <= RAW_CACHE_BYTES:
            u = np.concatenate([qe @ proj[kind].T for kind in KINDS], axis=1).astype(self.dtype)
            return np.matmul(self._stacked_raw(), u[:, :, None])[:, :, 0].astype(float)
        width = max(1, self.triplet.shape[2])
        block = max(1, 2_000_000 // (N * self.dim * width))
        bias = np.zeros((N, N))
        for start in range(0, N, block):
            rows = slice(start, min(N, start + block))
            for kind in KINDS:
                u = (qe[rows] @ proj[kind].T).astype(self.dtype)
                bias[rows] += np.matmul(self.raw(kind, rows, self.dtype, halves=True), u[:, :, None])[:, :, 0]
        return bias


def geometric_embedding(keypoints, covariances, normals, betas: Betas = Betas(), dim=256,
                        n_ref=3, dtype=np.float64) -> GeometricEmbedding:
    keypoints = np.asarray(keypoints, dtype=float)
    if len(keypoints) < 2:
        raise ParameterError("need at least 2 keypoints for pairwise embeddings")
    if dim % 2:
        raise ParameterError(f"embedding dimension must be even, got {dim}")
    euclid = np.linalg.norm(keypoints[:, None, :] - keypoints[None, :, :], axis=2)
    return GeometricEmbedding(
        mahalanobis_matrix(keypoints, np.asarray(covariances, dtype=float)),
        euclid,
        normal_angle_matrix(np.asarray(normals, dtype=float)),
        triplet_angles(keypoints, n_ref),
        betas,
        dim,
        dtype,
    )


def pairwise_geometric_embedding(fc, weights: WeightBundle, betas: Betas = Betas()):
    """Projected ``(N, N, dim)`` embedding for a FeatureCloud."""
    emb = geometric_embedding(fc.keypoints, fc.covariances, fc.normals, betas, weights.arch.dim)
    return emb.dense(weights)


def l2_normalize(x):
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / np.where(norm > 0, norm, 1.0)


def plane_attention(descriptors, embedding, weights: WeightBundle, layers: int | None = None):
    """Stacked geometric self-attention; returns unit-length descriptors.

    ``embedding`` is either a dense ``(N, N, dim)`` array or a
    :class:`GeometricEmbedding`. Each layer computes
    ``softmax_j((f_i Wq) . (f_j Wk + eps_ij We) / sqrt(dim)) f_j Wv``,
    adds it to ``f_i`` and L2-normalises each descriptor.
    """
    x = np.array(descriptors, dtype=float)
    layers = weights.arch.layers if layers is None else layers
    if layers > weights.arch.layers:
        raise ParameterError(f"weights hold {weights.arch.layers} attention layers, {layers} requested")
    N, dim = x.shape
    if dim != weights.arch.dim:
        raise ParameterError(f"descriptor dim {dim} does not match weights ({weights.arch.dim})")
    dense = not isinstance(embedding, GeometricEmbedding)
    if dense and np.shape(embedding) != (N, N, dim):
        raise ParameterError(f"embedding shape {np.shape(embedding)} != {(N, N, dim)}")
    scale = 1.0 / np.sqrt(dim)
    for layer in range(layers):
        Wq, Wk, Wv, We = (weights[f"attn.{layer}.{p}"] for p in ("query", "key", "value", "embedding"))
        q, k, v = x @ Wq, x @ Wk, x @ Wv
        if dense:
            bias = np.einsum("ijd,id->ij", embedding, q @ We.T)
        else:
            bias = embedding.attention_bias(q, We, weights)
        attn = softmax((q @ k.T + bias) * scale, axis=1)
        x = l2_normalize(x + attn @ v)
    return x
