import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from mapfuse.descriptor import (
    Betas,
    ExtractParams,
    FeatureCloud,
    NetArch,
    WeightBundle,
    detect_keypoints,
    encode_hierarchy,
    encode_stage,
    extract_features,
    geometric_embedding,
    pairwise_geometric_embedding,
    plane_attention,
    read_features,
    sinusoidal_embed,
    synth_weights,
    write_features,
)
from mapfuse.descriptor.backbone import RADIUS_FACTOR
from mapfuse.errors import FormatError, InsufficientDensityError, ParameterError
from mapfuse.geometry import PointCloud, random_pose
from mapfuse.geometry.se3 import so3_exp

SMALL = NetArch(stage_dims=(8, 12, 16), dense_dim=10, keypoint_hidden=(6, 5),
                descriptor_hidden=12, dim=8, layers=2)


def grid_scene(seed=0, leaf=0.3, half=12):
    """Points on voxel centres: a ground patch plus a few boxes.

    Every point sits at ``(i + 1/2) * leaf``, so a 90 degree turn about z
    maps voxels onto voxels at every power-of-two leaf.
    """
    rng = np.random.default_rng(seed)
    c = (np.arange(-half, half) + 0.5) * leaf
    gx, gy = np.meshgrid(c, c, indexing="ij")
    pts = [np.c_[gx.ravel(), gy.ravel(), np.full(gx.size, 0.5 * leaf)]]
    for _ in range(4):
        lo = rng.integers(-half + 2, half - 6, size=2)
        size = rng.integers(2, 6, size=3)
        ii, jj, kk = np.meshgrid(*(np.arange(s) for s in size), indexing="ij")
        box = np.c_[ii.ravel() + lo[0], jj.ravel() + lo[1], kk.ravel() + 1]
        shell = (ii.ravel() % (size[0] - 1) == 0) | (jj.ravel() % (size[1] - 1) == 0) | (kk.ravel() == size[2] - 1)
        pts.append((box[shell] + 0.5) * leaf)
    pts = np.unique(np.vstack(pts).round(9), axis=0)
    return pts


def rot_z90(points):
    return np.c_[-points[:, 1], points[:, 0], points[:, 2]]


def match_rows(a, b, tol=1e-9):
    """Index ``m`` with ``a[i] == b[m[i]]`` (point sets equal up to order)."""
    d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)
    m = d.argmin(axis=1)
    assert np.all(d[np.arange(len(a)), m] < tol)
    assert len(set(m)) == len(a)
    return m


# ---------------------------------------------------------------- sinusoids

def test_sinusoid_zero_and_quarter_turn():
    e = sinusoidal_embed(0.0, 0.7, 16)
    np.testing.assert_array_equal(e[0::2], 0.0)
    np.testing.assert_array_equal(e[1::2], 1.0)
    q = sinusoidal_embed(np.pi / 2, 1.0, 16)
    assert q[0] == pytest.approx(1.0, abs=1e-15) and q[1] == pytest.approx(0.0, abs=1e-15)


def test_sinusoid_scalar_oracle():
    e = sinusoidal_embed(4.8, 1 / 4.8, 4)
    c1 = 10000.0 ** 0.5
    expected = [math.sin(1.0), math.cos(1.0), math.sin(1.0 / c1), math.cos(1.0 / c1)]
    np.testing.assert_allclose(e, expected, rtol=0, atol=1e-15)


def test_sinusoid_general_oracle():
    rng = np.random.default_rng(3)
    v = rng.uniform(-20, 20, size=7)
    e = sinusoidal_embed(v, 0.3, 12)
    for i, val in enumerate(v):
        for k in range(6):
            arg = 0.3 * val / 10000.0 ** (2 * k / 12)
            assert e[i, 2 * k] == pytest.approx(math.sin(arg), abs=1e-14)
            assert e[i, 2 * k + 1] == pytest.approx(math.cos(arg), abs=1e-14)


def test_sinusoid_errors():
    with pytest.raises(ParameterError):
        sinusoidal_embed(1.0, 1.0, 7)
    with pytest.raises(ParameterError):
        sinusoidal_embed(1.0, 0.0, 8)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e4, 1e4), min_size=1, max_size=20), st.floats(1e-3, 10.0))
def test_sinusoid_bounded(values, beta):
    e = sinusoidal_embed(np.array(values), beta, 32)
    assert np.all(np.abs(e) <= 1.0)


def test_sinusoid_float32_close():
    v = np.linspace(0, 30, 101)
    np.testing.assert_allclose(sinusoidal_embed(v, 1 / 4.8, 256, np.float32),
                               sinusoidal_embed(v, 1 / 4.8, 256), atol=2e-6)


# ---------------------------------------------------------------- backbone

def test_single_stage_identity_constant_features():
    rng = np.random.default_rng(0)
    prev = rng.uniform(-1, 1, (300, 3))
    out = encode_stage(prev, np.ones((300, 1)), prev[:40], 0.5, np.eye(1), np.zeros(1), geometric_stats=False)
    np.testing.assert_array_equal(out, 1.0)


def test_stage_count_and_density_errors():
    w = synth_weights(0, SMALL)
    with pytest.raises(ParameterError):
        encode_hierarchy(PointCloud(grid_scene()), w, stages=2)
    with pytest.raises(InsufficientDensityError):
        encode_hierarchy(PointCloud(np.eye(3)), w)


@pytest.mark.parametrize("stats", [False, True])
def test_hierarchy_rotation_invariance(stats):
    arch = NetArch(**{**SMALL.__dict__, "geometric_stats": stats})
    w = synth_weights(1, arch)
    pts = grid_scene(1)
    h0 = encode_hierarchy(PointCloud(pts), w)
    h1 = encode_hierarchy(PointCloud(rot_z90(pts)), w)
    for s in range(arch.stages):
        m = match_rows(rot_z90(h0.levels[s]), h1.levels[s])
        np.testing.assert_allclose(h1.features[s][m], h0.features[s], atol=1e-6)
    m = match_rows(rot_z90(h0.dense_points), h1.dense_points)
    np.testing.assert_allclose(h1.dense_features[m], h0.dense_features, atol=1e-6)


def _ref_voxel(points, leaf):
    cells = {}
    for p in points:
        cells.setdefault(tuple(np.floor(p / leaf).astype(int)), []).append(p)
    return np.array([np.mean(cells[k], axis=0) for k in sorted(cells)])


def _ref_stats(nbrs, centre, radius):
    rel = nbrs - centre
    mean = rel.mean(axis=0)
    cov = (rel - mean).T @ (rel - mean) / len(rel)
    l1, l2, l3 = sorted(np.maximum(np.linalg.eigvalsh(cov), 0.0), reverse=True)
    if l1 > 1e-12 * radius**2:
        geo = [(l1 - l2) / l1, (l2 - l3) / l1, l3 / l1]
    else:
        geo = [0.0, 0.0, 0.0]
    return geo + [math.log1p(len(nbrs)) / 5.0, np.linalg.norm(rel, axis=1).mean() / radius]


def _ref_hierarchy(points, weights, base_leaf=0.3):
    """Straight-line stage recurrence with brute-force balls and loops."""
    arch = weights.arch
    leaky = lambda x: np.where(x > 0, x, 0.1 * x)  # noqa: E731
    levels, feats = [], []
    prev_p, prev_f = points, np.ones((len(points), 1))
    for s in range(arch.stages):
        leaf = base_leaf * 2**s
        pts = points if s == 0 else _ref_voxel(levels[-1], leaf)
        r = RADIUS_FACTOR * leaf
        W, b = weights.layer(f"enc.{s}")
        rows = []
        for p in pts:
            mask = np.linalg.norm(prev_p - p, axis=1) <= r
            x = list(prev_f[mask].mean(axis=0))
            if arch.geometric_stats:
                x += _ref_stats(prev_p[mask], p, r)
            rows.append(leaky(np.array(x) @ W + b))
        levels.append(pts)
        feats.append(np.array(rows))
        prev_p, prev_f = pts, feats[-1]
    up = feats[-1]
    for s in range(arch.stages - 2, 0, -1):
        W, b = weights.layer(f"dec.{s}")
        out = []
        for i, p in enumerate(levels[s]):
            j = int(np.argmin(np.linalg.norm(levels[s + 1] - p, axis=1)))
            out.append(np.concatenate([up[j], feats[s][i]]) @ W + b)
        up = np.array(out)
    return levels, feats, up


def test_hierarchy_reference_forward_pass():
    rng = np.random.default_rng(5)
    plane = np.c_[rng.uniform(0, 6, (500, 2)), 0.02 * rng.normal(size=500)]
    base = _ref_voxel(plane, 0.3)
    w = synth_weights(2, SMALL)
    h = encode_hierarchy(PointCloud(base), w)
    levels, feats, dense = _ref_hierarchy(base, w)
    for s in range(3):
        np.testing.assert_allclose(h.levels[s], levels[s], atol=1e-12)
        np.testing.assert_allclose(h.features[s], feats[s], atol=1e-9)
    np.testing.assert_allclose(h.dense_features, dense, atol=1e-9)


# ---------------------------------------------------------------- keypoints

def _scene_hierarchy(weights, seed=0):
    # jitter breaks the exact distance ties of the grid
    pts = grid_scene(seed) + 0.01 * np.random.default_rng(seed).normal(size=(1, 3))
    pts = pts + 0.01 * np.random.default_rng(seed + 1).normal(size=pts.shape)
    return encode_hierarchy(PointCloud(pts), weights)


def test_constant_logits_give_centroid():
    w = synth_weights(0, SMALL)
    last = len(SMALL.keypoint_hidden) - 1
    W, b = w.layer(f"kp.score.{last}")
    w = w.replace(**{f"kp__score__{last}__weight": np.zeros_like(W), f"kp__score__{last}__bias": np.full_like(b, 2.0)})
    h = _scene_hierarchy(w)
    k = 8
    res = detect_keypoints(h, w, k=k)
    np.testing.assert_allclose(res.weights, 1.0 / k, atol=1e-15)
    for i, sp in enumerate(h.sparse_points):
        d = np.linalg.norm(h.dense_points - sp, axis=1)
        nb = np.lexsort((np.arange(len(d)), d))[:k]
        np.testing.assert_allclose(res.keypoints[i], h.dense_points[nb].mean(axis=0), atol=1e-12)


def test_one_hot_logits_pick_nearest():
    w = synth_weights(0, SMALL)
    W0 = np.zeros((SMALL.dense_dim + 4, 6))
    W0[-1, 0] = -1.0                       # hidden unit 0 = leaky(-dist) = -0.1 dist
    W1 = np.zeros((6, 5))
    W1[0, :] = 1e6
    w = w.replace(kp__score__0__weight=W0, kp__score__0__bias=np.zeros(6),
                  kp__score__1__weight=W1, kp__score__1__bias=np.zeros(5))
    h = _scene_hierarchy(w)
    res = detect_keypoints(h, w, k=8)
    checked = 0
    for i, sp in enumerate(h.sparse_points):
        d = np.sort(np.linalg.norm(h.dense_points - sp, axis=1))
        if d[1] - d[0] < 1e-3:
            continue
        nearest = h.dense_points[np.argmin(np.linalg.norm(h.dense_points - sp, axis=1))]
        np.testing.assert_allclose(res.keypoints[i], nearest, atol=1e-4)
        checked += 1
    assert checked > 0


def _ref_keypoints(h, weights, k):
    leaky = lambda x: np.where(x > 0, x, 0.1 * x)  # noqa: E731
    kps, descs = [], []
    n_layers = len(weights.arch.keypoint_hidden)
    for i, sp in enumerate(h.sparse_points):
        d = np.linalg.norm(h.dense_points - sp, axis=1)
        nb = np.lexsort((np.arange(len(d)), d))[:k]
        rel = h.dense_points[nb] - sp
        vals, vecs = np.linalg.eigh(rel.T @ rel / k)
        axes = []
        for col in (2, 1):
            e = vecs[:, col]
            proj = rel @ e
            s = np.sign(np.sum(proj > 0) - np.sum(proj < 0)) or np.sign(np.sum(proj**3)) or 1.0
            axes.append(e * s)
        frame = np.c_[axes[0], axes[1], np.cross(axes[0], axes[1])]
        logits = []
        for j in range(k):
            x = np.concatenate([h.dense_features[nb[j]], rel[j] @ frame, [np.linalg.norm(rel[j])]])
            for layer in range(n_layers):
                W, b = weights.layer(f"kp.score.{layer}")
                x = x @ W + b
                if layer < n_layers - 1:
                    x = leaky(x)
            logits.append(x.max())
        logits = np.array(logits)
        wts = np.exp(logits - logits.max())
        wts /= wts.sum()
        kps.append(wts @ h.dense_points[nb])
        W0, b0 = weights.layer("kp.desc.0")
        W1, b1 = weights.layer("kp.desc.1")
        x = np.concatenate([h.sparse_features[i], wts @ h.dense_features[nb]])
        descs.append(leaky(x @ W0 + b0) @ W1 + b1)
    return np.array(kps), np.array(descs)


def test_keypoints_reference_and_convex_hull():
    w = synth_weights(4, SMALL)
    h = _scene_hierarchy(w, seed=2)
    assert 8 <= len(h.sparse_points) <= 60
    res = detect_keypoints(h, w, k=16)
    kps, descs = _ref_keypoints(h, w, 16)
    np.testing.assert_allclose(res.keypoints, kps, atol=1e-6)
    np.testing.assert_allclose(res.descriptors, descs, atol=1e-6)
    np.testing.assert_allclose(res.weights.sum(axis=1), 1.0, atol=1e-9)
    assert np.all((res.weights >= 0) & (res.weights <= 1))
    for i in range(len(kps)):
        group = h.dense_points[res.neighbors[i]]
        # feasibility LP: lambda >= 0, sum lambda = 1, group^T lambda = keypoint
        A = np.vstack([group.T, np.ones(len(group))])
        lp = linprog(np.zeros(len(group)), A_eq=A, b_eq=np.r_[res.keypoints[i], 1.0], bounds=(0, None))
        assert lp.status == 0


def test_keypoint_density_error_and_dilation():
    w = synth_weights(0, SMALL)
    h = _scene_hierarchy(w)
    with pytest.raises(InsufficientDensityError):
        detect_keypoints(h, w, k=len(h.dense_points))
    a = detect_keypoints(h, w, k=8, dilation=True, seed=3)
    b = detect_keypoints(h, w, k=8, dilation=True, seed=3)
    c = detect_keypoints(h, w, k=8, dilation=False)
    np.testing.assert_array_equal(a.neighbors, b.neighbors)
    assert not np.array_equal(a.neighbors, c.neighbors)
    for i, sp in enumerate(h.sparse_points):
        d = np.linalg.norm(h.dense_points - sp, axis=1)
        pool = set(np.lexsort((np.arange(len(d)), d))[:16])
        assert set(a.neighbors[i]) <= pool and len(set(a.neighbors[i])) == 8


# ---------------------------------------------------------------- embedding

def random_feature_cloud(rng, n=12, dim=8):
    pts = rng.uniform(-5, 5, (n, 3))
    A = rng.normal(size=(n, 3, 3))
    cov = A @ A.transpose(0, 2, 1) * 0.05 + 1e-3 * np.eye(3)
    nrm = rng.normal(size=(n, 3))
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    return FeatureCloud(pts, rng.normal(size=(n, dim)), cov, nrm)


def transformed(fc, pose):
    R = pose.rotation
    return FeatureCloud(pose.apply(fc.keypoints), fc.descriptors, R @ fc.covariances @ R.T, fc.normals @ R.T)


def test_embedding_rigid_invariance():
    rng = np.random.default_rng(11)
    w = synth_weights(0, SMALL)
    for _ in range(20):
        fc = random_feature_cloud(rng)
        pose = random_pose(rng, np.pi, 10.0)
        a = geometric_embedding(fc.keypoints, fc.covariances, fc.normals, dim=8)
        b = geometric_embedding(*(lambda t: (t.keypoints, t.covariances, t.normals))(transformed(fc, pose)), dim=8)
        for kind in ("mahalanobis", "euclidean", "normal", "triplet"):
            np.testing.assert_allclose(b.raw(kind), a.raw(kind), atol=1e-6)
        np.testing.assert_allclose(pairwise_geometric_embedding(transformed(fc, pose), w),
                                   pairwise_geometric_embedding(fc, w), atol=1e-6)


def test_embedding_bounded_and_diagonal_pattern():
    rng = np.random.default_rng(2)
    w = synth_weights(0, SMALL)
    fc = random_feature_cloud(rng)
    emb = geometric_embedding(fc.keypoints, fc.covariances, fc.normals, dim=8)
    pattern = np.tile([0.0, 1.0], 4)
    for kind in ("mahalanobis", "euclidean", "normal", "triplet"):
        raw = emb.raw(kind)
        assert np.all(np.abs(raw) <= 1.0)
        np.testing.assert_allclose(raw[np.arange(12), np.arange(12)], np.tile(pattern, (12, 1)), atol=1e-15)
    dense = pairwise_geometric_embedding(fc, w)
    expected = sum(pattern @ w[f"embed.{k}"] for k in ("mahalanobis", "euclidean", "normal", "triplet"))
    np.testing.assert_allclose(dense[np.arange(12), np.arange(12)], np.tile(expected, (12, 1)), atol=1e-12)


def test_mahalanobis_half_identity_is_squared_distance():
    rng = np.random.default_rng(4)
    pts = rng.uniform(-3, 3, (9, 3))
    emb = geometric_embedding(pts, np.tile(0.5 * np.eye(3), (9, 1, 1)), np.tile([0, 0, 1.0], (9, 1)), dim=8)
    d2 = np.sum((pts[:, None] - pts[None]) ** 2, axis=2)
    np.testing.assert_allclose(emb.mahalanobis, d2, atol=1e-12)


def test_singular_covariance_regularized():
    pts = np.array([[0.0, 0, 0], [1, 0, 0], [0, 2, 0]])
    cov = np.zeros((3, 3, 3))
    emb = geometric_embedding(pts, cov, np.tile([0, 0, 1.0], (3, 1)), dim=8)
    assert np.all(np.isfinite(emb.mahalanobis))
    assert emb.mahalanobis[0, 1] == pytest.approx(1.0 / 1e-6, rel=1e-9)


def test_normal_angle_sign_blind():
    pts = np.array([[0.0, 0, 0], [1, 0, 0]])
    n = np.array([[0, 0, 1.0], [0, np.sin(0.3), -np.cos(0.3)]])
    emb = geometric_embedding(pts, np.tile(np.eye(3), (2, 1, 1)), n, dim=8)
    assert emb.normal[0, 1] == pytest.approx(0.3, abs=1e-12)


def test_embedding_needs_two_keypoints():
    with pytest.raises(ParameterError):
        geometric_embedding(np.zeros((1, 3)), np.eye(3)[None], np.array([[0, 0, 1.0]]), dim=8)


# ---------------------------------------------------------------- attention

def _ref_attention(desc, eps, weights, layers):
    """Dense matrices, explicit loops over keypoints."""
    x = desc.copy()
    d = x.shape[1]
    for layer in range(layers):
        Wq, Wk, Wv, We = (weights[f"attn.{layer}.{p}"] for p in ("query", "key", "value", "embedding"))
        new = np.empty_like(x)
        for i in range(len(x)):
            q = x[i] @ Wq
            logits = np.array([q @ (x[j] @ Wk + eps[i, j] @ We) for j in range(len(x))]) / math.sqrt(d)
            a = np.exp(logits - logits.max())
            a /= a.sum()
            out = x[i] + sum(a[j] * (x[j] @ Wv) for j in range(len(x)))
            new[i] = out / np.linalg.norm(out)
        x = new
    return x


def test_attention_matches_dense_reference_full_width():
    rng = np.random.default_rng(8)
    w = synth_weights(3)
    fc = random_feature_cloud(rng, n=8, dim=256)
    eps = pairwise_geometric_embedding(fc, w)
    ref = _ref_attention(fc.descriptors, eps, w, 3)
    np.testing.assert_allclose(plane_attention(fc.descriptors, eps, w), ref, atol=1e-6)
    emb = geometric_embedding(fc.keypoints, fc.covariances, fc.normals, dim=256)
    np.testing.assert_allclose(plane_attention(fc.descriptors, emb, w), ref, atol=1e-10)
    emb32 = geometric_embedding(fc.keypoints, fc.covariances, fc.normals, dim=256, dtype=np.float32)
    np.testing.assert_allclose(plane_attention(fc.descriptors, emb32, w), ref, atol=1e-6)


def test_attention_permutation_equivariance():
    rng = np.random.default_rng(9)
    w = synth_weights(1, SMALL)
    fc = random_feature_cloud(rng, n=15)
    perm = rng.permutation(15)
    pc = FeatureCloud(fc.keypoints[perm], fc.descriptors[perm], fc.covariances[perm], fc.normals[perm])
    for make in (lambda c: pairwise_geometric_embedding(c, w),
                 lambda c: geometric_embedding(c.keypoints, c.covariances, c.normals, dim=8)):
        a = plane_attention(fc.descriptors, make(fc), w)
        b = plane_attention(pc.descriptors, make(pc), w)
        assert np.max(np.abs(b - a[perm])) < 1e-9


def test_attention_single_keypoint_closed_form():
    rng = np.random.default_rng(10)
    w = synth_weights(5, SMALL)
    f = rng.normal(size=(1, 8))
    out = plane_attention(f, np.zeros((1, 1, 8)), w, layers=1)
    expected = f + f @ w["attn.0.value"]
    np.testing.assert_allclose(out, expected / np.linalg.norm(expected), atol=1e-15)
    x = f
    for layer in range(2):
        x = x + x @ w[f"attn.{layer}.value"]
        x /= np.linalg.norm(x)
    np.testing.assert_allclose(plane_attention(f, np.full((1, 1, 8), 3.0), w), x, atol=1e-15)


def test_attention_output_unit_norm_and_shape_errors():
    rng = np.random.default_rng(12)
    w = synth_weights(0, SMALL)
    fc = random_feature_cloud(rng)
    out = plane_attention(fc.descriptors, pairwise_geometric_embedding(fc, w), w)
    np.testing.assert_allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-12)
    with pytest.raises(ParameterError):
        plane_attention(fc.descriptors, np.zeros((3, 3, 8)), w)
    with pytest.raises(ParameterError):
        plane_attention(fc.descriptors, pairwise_geometric_embedding(fc, w), w, layers=3)


# ---------------------------------------------------------------- end to end

def test_extract_rotation_invariance():
    w = synth_weights(6, SMALL)
    # jitter well inside each voxel keeps the voxel mapping but breaks kNN ties
    pts = grid_scene(3) + 0.01 * np.random.default_rng(3).normal(size=(1, 3)) * [1, 1, 0]
    pts = pts + 0.01 * np.random.default_rng(4).normal(size=pts.shape)
    params = ExtractParams(k=8, fast_trig=False)
    a = extract_features(PointCloud(pts), w, params)
    b = extract_features(PointCloud(rot_z90(pts)), w, params)
    m = match_rows(rot_z90(a.keypoints), b.keypoints, tol=1e-6)
    np.testing.assert_allclose(b.descriptors[m], a.descriptors, atol=1e-5)


def test_extract_deterministic_bytes(tmp_path):
    w = synth_weights(6, SMALL)
    cloud = PointCloud(grid_scene(4))
    for name in ("a", "b"):
        write_features(tmp_path / name, extract_features(cloud, w, ExtractParams(k=8, dilation=True, seed=2)))
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_feature_file_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    fc = random_feature_cloud(rng, n=5, dim=6)
    fc = FeatureCloud(*(a.astype(np.float32).astype(float) for a in
                        (fc.keypoints, fc.descriptors, fc.covariances, fc.normals)))
    write_features(tmp_path / "f.bin", fc)
    back = read_features(tmp_path / "f.bin")
    for attr in ("keypoints", "descriptors", "normals"):
        np.testing.assert_array_equal(getattr(back, attr), getattr(fc, attr))
    np.testing.assert_allclose(back.covariances, fc.covariances, atol=1e-7)
    data = (tmp_path / "f.bin").read_bytes()
    assert data[:6] == b"GMLDF1"
    (tmp_path / "t.bin").write_bytes(data[:-4])
    with pytest.raises(FormatError, match="t.bin"):
        read_features(tmp_path / "t.bin")
    with pytest.raises(FormatError, match="missing.bin"):
        read_features(tmp_path / "missing.bin")


def test_feature_cloud_validation():
    with pytest.raises(ValueError):
        FeatureCloud(np.zeros((3, 3)), np.zeros((2, 4)), np.zeros((3, 3, 3)), np.zeros((3, 3)))
    with pytest.raises(ParameterError):
        FeatureCloud(np.full((1, 3), np.nan), np.zeros((1, 4)), np.zeros((1, 3, 3)), np.zeros((1, 3)))


# ---------------------------------------------------------------- weights

def test_weight_file_round_trip(tmp_path):
    w = synth_weights(7, SMALL)
    w.save(tmp_path / "w.bin")
    back = WeightBundle.load(tmp_path / "w.bin")
    assert back.arch == SMALL
    for name in w.tensors:
        np.testing.assert_array_equal(back[name], w[name])


def test_weight_file_rejects_bad_input(tmp_path):
    w = synth_weights(7, SMALL)
    w.save(tmp_path / "w.bin")
    data = (tmp_path / "w.bin").read_bytes()
    (tmp_path / "trunc.bin").write_bytes(data[:-3])
    (tmp_path / "magic.bin").write_bytes(b"XXXXXX" + data[6:])
    for bad in ("trunc.bin", "magic.bin", "nothing.bin"):
        with pytest.raises(FormatError, match=bad):
            WeightBundle.load(tmp_path / bad)
    tensors = dict(w.tensors)
    tensors["attn.0.query"] = np.zeros((8, 7))
    with pytest.raises(FormatError):
        WeightBundle(tensors, SMALL)
    tensors = dict(w.tensors)
    tensors["embed.normal"] = np.full((8, 8), np.inf)
    with pytest.raises(FormatError):
        WeightBundle(tensors, SMALL)
    tensors = dict(w.tensors)
    del tensors["kp.desc.1.bias"]
    with pytest.raises(FormatError):
        WeightBundle(tensors, SMALL)


def test_synth_weights_seeded():
    a, b, c = synth_weights(1, SMALL), synth_weights(1, SMALL), synth_weights(2, SMALL)
    assert all(np.array_equal(a[n], b[n]) for n in a.tensors)
    assert not np.array_equal(a["attn.0.query"], c["attn.0.query"])
    assert set(a.tensors) == set(SMALL.shapes())


def test_rotation_helper_sanity():
    # the 90 degree z-turn used above is a proper rotation
    np.testing.assert_allclose(rot_z90(np.eye(3)), np.eye(3) @ so3_exp([0, 0, np.pi / 2]).T, atol=1e-15)
