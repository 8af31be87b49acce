"""FeatureCloud, the end-to-end extractor and the ``GMLDF1`` feature file.

Feature file layout (little-endian)::

    b"GMLDF1", u32 keypoint count N, u32 descriptor dim D,
    f32 keypoints (N x 3), f32 descriptors (N x D),
    f32 covariances (N x 3 x 3), f32 normals (N x 3)
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import FormatError, ParameterError
from ..geometry import PointCloud, SpatialIndex, voxel_downsample
from ..geometry.cloud import local_covariances_normals
from .backbone import encode_hierarchy
from .keypoints import detect_keypoints
from .transformer import Betas, geometric_embedding, plane_attention
from .weights import WeightBundle

MAGIC = b"GMLDF1"


@dataclass(frozen=True, eq=False)
class FeatureCloud:
    keypoints: np.ndarray
    descriptors: np.ndarray
    covariances: np.ndarray
    normals: np.ndarray

    def __post_init__(self):
        kp = np.asarray(self.keypoints, dtype=float).reshape(-1, 3)
        n = len(kp)
        desc = np.asarray(self.descriptors, dtype=float).reshape(n, -1)
        cov = np.asarray(self.covariances, dtype=float).reshape(n, 3, 3)
        nrm = np.asarray(self.normals, dtype=float).reshape(n, 3)
        for name, arr in (("keypoints", kp), ("descriptors", desc), ("covariances", cov), ("normals", nrm)):
            if not np.all(np.isfinite(arr)):
                raise ParameterError(f"FeatureCloud {name} must be finite")
        object.__setattr__(self, "keypoints", kp)
        object.__setattr__(self, "descriptors", desc)
        object.__setattr__(self, "covariances", cov)
        object.__setattr__(self, "normals", nrm)

    def __len__(self):
        return len(self.keypoints)

    @property
    def dim(self):
        return self.descriptors.shape[1]

    def with_descriptors(self, descriptors):
        return FeatureCloud(self.keypoints, descriptors, self.covariances, self.normals)


@dataclass(frozen=True)
class ExtractParams:
    base_leaf: float = 0.3
    k: int = 64
    dilation: bool = False
    seed: int = 0
    covariance_k: int = 20
    betas: Betas = field(default_factory=Betas)
    fast_trig: bool = True     # float32 sin/cos in the attention bias


def keypoint_geometry(keypoints, dense_points, k=20):
    """Covariance of the ``k`` nearest dense points of each keypoint, and its normal."""
    idx, _ = SpatialIndex(dense_points).knn(keypoints, min(k, len(dense_points)))
    cov, normals, _ = local_covariances_normals(dense_points, idx)
    return cov, normals


def extract_features(cloud: PointCloud, weights: WeightBundle, params: ExtractParams = ExtractParams()):
    """Voxelize, encode, detect keypoints and run geometric attention."""
    base = voxel_downsample(cloud, params.base_leaf)
    hierarchy = encode_hierarchy(base, weights, base_leaf=params.base_leaf)
    kp = detect_keypoints(hierarchy, weights, params.k, params.dilation, params.seed)
    cov, normals = keypoint_geometry(kp.keypoints, hierarchy.dense_points, params.covariance_k)
    if len(kp.keypoints) >= 2:
        dtype = np.float32 if params.fast_trig else np.float64
        emb = geometric_embedding(kp.keypoints, cov, normals, params.betas, weights.arch.dim, dtype=dtype)
    else:
        emb = np.zeros((1, 1, weights.arch.dim))
    desc = plane_attention(kp.descriptors, emb, weights)
    return FeatureCloud(kp.keypoints, desc, cov, normals)


def write_features(path, fc: FeatureCloud) -> None:
    n, d = fc.descriptors.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", n, d))
        for arr in (fc.keypoints, fc.descriptors, fc.covariances, fc.normals):
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_features(path) -> FeatureCloud:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: cannot read ({exc.strerror})") from exc
    if not data.startswith(MAGIC) or len(data) < len(MAGIC) + 8:
        raise FormatError(f"{path}: not a GMLDF1 feature file")
    n, d = struct.unpack_from("<II", data, len(MAGIC))
    sizes = [n * 3, n * d, n * 9, n * 3]
    if len(data) != len(MAGIC) + 8 + 4 * sum(sizes):
        raise FormatError(f"{path}: size does not match header (N={n}, D={d})")
    flat = np.frombuffer(data, dtype="<f4", offset=len(MAGIC) + 8).astype(float)
    parts = np.split(flat, np.cumsum(sizes)[:-1])
    cov = parts[2].reshape(n, 3, 3)
    return FeatureCloud(parts[0], parts[1].reshape(n, d), 0.5 * (cov + cov.transpose(0, 2, 1)), parts[3])
