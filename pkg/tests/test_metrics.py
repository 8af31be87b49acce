import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from mapfuse.errors import ParameterError, UndefinedMetricsError
from mapfuse.geometry import Pose, random_pose
from mapfuse.metrics import (
    EvalReport,
    ate_rmse,
    chamfer_loss,
    circle_loss,
    patch_overlap,
    pr_curve,
    registration_metrics,
    transformation_loss,
)


# ---------------------------------------------------------------- oracles

def enumerate_pr(scores, labels):
    """F1-max and envelope AP by trying every distinct threshold one at a time."""
    total = sum(labels)
    points = []
    for t in sorted(set(scores), reverse=True):
        tp = sum(1 for s, y in zip(scores, labels) if s >= t and y)
        fp = sum(1 for s, y in zip(scores, labels) if s >= t and not y)
        points.append((tp / (tp + fp), tp / total))
    f1 = max((2 * p * r / (p + r) if p + r > 0 else 0.0) for p, r in points)
    recalls = sorted({r for _, r in points})
    ap, prev = 0.0, 0.0
    for r in recalls:
        ap += (r - prev) * max(p for p, rr in points if rr >= r)
        prev = r
    return f1, ap


def circle_oracle(F, G, lam, gamma, dp=0.1, dn=1.4, thr=0.1):
    def side(A, B, L):
        total, count = 0.0, 0
        for i in range(len(A)):
            pos = [j for j in range(len(B)) if L[i][j] >= thr]
            if not pos:
                continue
            neg = [k for k in range(len(B)) if L[i][k] < thr]
            sp = sum(math.exp(gamma * (math.dist(A[i], B[j]) - dp) ** 2 * math.sqrt(L[i][j])) for j in pos)
            sn = sum(math.exp(gamma * (dn - math.dist(A[i], B[k])) ** 2) for k in neg)
            total += math.log(1 + sp * sn)
            count += 1
        return total / count if count else 0.0
    return 0.5 * (side(F, G, lam) + side(G, F, np.asarray(lam).T))


# ---------------------------------------------------------------- circle loss

def test_circle_margin_cancellation():
    # one anchor with two positives at exactly the positive margin and three negatives at the negative one
    F = np.array([[0.0, 0.0]])
    G = np.array([[0.1, 0], [0, 0.1], [1.4, 0], [0, 1.4], [-1.4, 0]])
    lam = np.array([[1.0, 0.3, 0.0, 0.0, 0.0]])
    loss, _, _ = circle_loss(F, G, lam)
    # the reverse direction only has anchors without negatives, each contributing log(1 + 0)
    assert loss == pytest.approx(0.5 * math.log(1 + 2 * 3), abs=1e-12)


def test_circle_scalar_case():
    F = np.array([[0.0, 0.0]])
    G = np.array([[0.0, 0.0], [2.0, 0.0]])
    lam = np.array([[1.0, 0.0]])
    loss, _, _ = circle_loss(F, G, lam, gamma=1.0)
    p_side = math.log(1 + math.exp((0 - 0.1) ** 2) * math.exp((1.4 - 2.0) ** 2))
    # from Q: the first point has F as positive and no negatives; the second has no positives
    q_side = math.log(1 + 0.0)
    assert loss == pytest.approx(0.5 * (p_side + q_side), rel=1e-14)


def test_circle_matches_loop_oracle():
    rng = np.random.default_rng(0)
    for _ in range(10):
        F, G = rng.normal(size=(5, 4)), rng.normal(size=(6, 4))
        lam = np.where(rng.random((5, 6)) < 0.3, rng.uniform(0.1, 1, (5, 6)), rng.uniform(0, 0.09, (5, 6)))
        assert circle_loss(F, G, lam, gamma=2.0)[0] == pytest.approx(circle_oracle(F, G, lam, 2.0), rel=1e-12)


def test_circle_gradient_finite_difference():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(10):
        F = rng.normal(size=(4, 3))
        F /= np.linalg.norm(F, axis=1, keepdims=True)
        G = F[[1, 0, 3, 2]] + 0.2 * rng.normal(size=(4, 3))
        lam = np.array([[0, 0.8, 0, 0.05], [0.4, 0, 0, 0], [0, 0, 0, 0.6], [0, 0.02, 1.0, 0]])
        loss, gF, gG = circle_loss(F, G, lam, gamma=1.0)
        num_F, num_G = np.zeros_like(F), np.zeros_like(G)
        for X, num in ((F, num_F), (G, num_G)):
            for idx in np.ndindex(X.shape):
                old = X[idx]
                X[idx] = old + 1e-5
                up = circle_loss(F, G, lam, gamma=1.0)[0]
                X[idx] = old - 1e-5
                down = circle_loss(F, G, lam, gamma=1.0)[0]
                X[idx] = old
                num[idx] = (up - down) / 2e-5
        scale = max(np.abs(gF).max(), np.abs(gG).max())
        worst = max(worst, np.abs(num_F - gF).max() / scale, np.abs(num_G - gG).max() / scale)
    assert worst < 1e-4


def test_circle_skips_anchors_without_positives():
    rng = np.random.default_rng(2)
    F, G = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    lam = np.zeros((3, 3))
    loss, gF, gG = circle_loss(F, G, lam)
    assert loss == 0.0 and not gF.any() and not gG.any()
    lam[0, 0] = 0.5
    assert circle_loss(F, G, lam)[0] == pytest.approx(circle_oracle(F, G, lam, 10.0), rel=1e-12)


def test_circle_rejects_bad_input():
    with pytest.raises(ParameterError):
        circle_loss(np.zeros((2, 3)), np.zeros((2, 4)), np.zeros((2, 2)))
    with pytest.raises(ParameterError):
        circle_loss(np.zeros((2, 3)), np.zeros((2, 3)), np.full((2, 2), 1.5))


def test_patch_overlap_symmetry_and_identity():
    rng = np.random.default_rng(3)
    # random samples: a regular grid puts neighbours exactly on the leaf distance
    pts = np.c_[rng.uniform(0, 4, (1600, 2)), 0.05 * rng.normal(size=1600)]
    kp = pts[rng.choice(len(pts), 6, replace=False)]
    T = random_pose(rng, np.pi, 5.0)
    forward = patch_overlap(pts, kp, T.apply(pts), T.apply(kp), T)
    np.testing.assert_allclose(np.diag(forward.overlap), 1.0)
    backward = patch_overlap(T.apply(pts), T.apply(kp), pts, kp, T.inverse())
    np.testing.assert_allclose(forward.overlap, backward.overlap.T, atol=1e-12)
    assert np.all((forward.overlap >= 0) & (forward.overlap <= 1))
    with pytest.raises(ParameterError):
        patch_overlap(pts, kp, pts, kp, T, radius=0.0)


# ---------------------------------------------------------------- transformation and chamfer

def test_transformation_loss_cases():
    rng = np.random.default_rng(4)
    P = rng.normal(size=(50, 3))
    T = random_pose(rng)
    assert transformation_loss(T, T, P) == 0.0
    delta = np.array([0.3, -0.2, 0.5])
    assert transformation_loss(Pose(T.rotation, T.translation + delta), T, P) == pytest.approx(delta @ delta, rel=1e-12)
    for _ in range(5):
        A, B = random_pose(rng, np.pi, 3.0), random_pose(rng, np.pi, 3.0)
        D = B.matrix - A.matrix
        oracle = sum(float(np.sum((D @ np.r_[p, 1.0]) ** 2)) for p in P) / len(P)
        assert transformation_loss(A, B, P) == pytest.approx(oracle, rel=1e-12)
        assert transformation_loss(A, B, P) > 0
    with pytest.raises(ParameterError):
        transformation_loss(T, T, np.zeros((0, 3)))


def brute_chamfer(P, Q):
    a = [min(sum((p[k] - q[k]) ** 2 for k in range(3)) for q in Q) for p in P]
    b = [min(sum((q[k] - p[k]) ** 2 for k in range(3)) for p in P) for q in Q]
    return 0.5 * sum(a) / len(a) + 0.5 * sum(b) / len(b)


def test_chamfer_cases():
    assert chamfer_loss(np.zeros((1, 3)), [[1.0, 0, 0]]) == 1.0
    rng = np.random.default_rng(5)
    P = rng.normal(size=(20, 3))
    assert chamfer_loss(P, P) == 0.0
    for _ in range(10):
        P, Q = rng.normal(size=(20, 3)), rng.normal(size=(17, 3))
        assert chamfer_loss(P, Q) == pytest.approx(brute_chamfer(P, Q), rel=1e-15, abs=0)
        assert chamfer_loss(P, Q) == chamfer_loss(Q, P)
    with pytest.raises(ParameterError):
        chamfer_loss(np.zeros((0, 3)), P)


# ---------------------------------------------------------------- PR

def test_pr_perfect_separation():
    c = pr_curve([0.9, 0.8, 0.3, 0.1], [True, True, False, False])
    assert c.f1_max == 1.0 and c.average_precision == 1.0


def test_pr_three_point_example():
    c = pr_curve([(0.9, True), (0.8, False), (0.7, True)])
    f1, ap = enumerate_pr([0.9, 0.8, 0.7], [1, 0, 1])
    assert c.f1_max == pytest.approx(f1) and c.average_precision == pytest.approx(ap)
    assert ap == pytest.approx(0.5 * 1.0 + 0.5 * 2 / 3)


def test_pr_inverted_scores_prevalence():
    labels = [False] * 7 + [True] * 3
    scores = np.linspace(1, 0, 10)
    c = pr_curve(scores, labels)
    _, ap = enumerate_pr(list(scores), labels)
    assert c.average_precision == pytest.approx(ap) == pytest.approx(0.3)


def test_pr_random_label_sets():
    rng = np.random.default_rng(6)
    for _ in range(50):
        n = int(rng.integers(2, 40))
        scores = np.round(rng.random(n), 1)        # coarse rounding forces ties
        labels = rng.random(n) < 0.4
        labels[rng.integers(n)] = True
        c = pr_curve(scores, labels)
        f1, ap = enumerate_pr(list(scores), list(labels))
        assert c.f1_max == pytest.approx(f1, abs=1e-12)
        assert c.average_precision == pytest.approx(ap, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(-40, 40).map(lambda k: k / 8), st.booleans()), min_size=1, max_size=30))
def test_pr_monotone_rescaling_invariant(pairs):
    if not any(y for _, y in pairs):
        pairs = pairs + [(0.0, True)]
    s = np.array([p[0] for p in pairs])
    y = [p[1] for p in pairs]
    a = pr_curve(s, y)
    b = pr_curve(np.exp(s) * 3 + 1, y)
    assert a.average_precision == b.average_precision and a.f1_max == b.f1_max
    assert 0 <= a.average_precision <= 1 and 0 <= a.f1_max <= 1


def test_pr_needs_positives():
    with pytest.raises(UndefinedMetricsError):
        pr_curve([0.5, 0.2], [False, False])


# ---------------------------------------------------------------- registration metrics

def test_registration_exact():
    rng = np.random.default_rng(7)
    poses = [random_pose(rng, np.pi, 10.0) for _ in range(5)]
    m = registration_metrics(poses, poses)
    assert m.te_mean == 0.0 and m.re_mean == 0.0 and m.recall == 1.0


@pytest.mark.parametrize("angle, included", [(5.0, False), (4.999, True)])
def test_registration_rotation_boundary(angle, included):
    rng = np.random.default_rng(8)
    for _ in range(20):
        truth = random_pose(rng, np.pi, 10.0)
        axis = rng.normal(size=3)
        R = Rotation.from_rotvec(np.radians(angle) * axis / np.linalg.norm(axis)).as_matrix()
        m = registration_metrics([Pose(truth.rotation @ R, truth.translation)], [truth])
        assert m.recall == (1.0 if included else 0.0)


def test_registration_translation_boundary():
    truth = Pose.identity()
    assert registration_metrics([Pose(np.eye(3), [2.0, 0, 0])], [truth]).recall == 0.0
    assert registration_metrics([Pose(np.eye(3), [1.999, 0, 0])], [truth]).recall == 1.0


def test_registration_per_pair_oracle():
    rng = np.random.default_rng(9)
    truths = [random_pose(rng, np.pi, 10.0) for _ in range(20)]
    ests = [t @ random_pose(rng, np.radians(10), 3.0) for t in truths]
    m = registration_metrics(ests, truths)
    te = [float(np.linalg.norm(e.translation - t.translation)) for e, t in zip(ests, truths)]
    re = [math.acos(min(1.0, max(-1.0, (np.trace(t.rotation.T @ e.rotation) - 1) / 2))) for e, t in zip(ests, truths)]
    assert m.te_mean == pytest.approx(np.mean(te), rel=1e-12)
    assert m.re_mean == pytest.approx(np.mean(re), rel=1e-7)
    assert m.recall == np.mean([a < 2 and math.degrees(b) < 5 for a, b in zip(te, re)])
    with pytest.raises(ParameterError):
        registration_metrics(ests, truths[:3])


# ---------------------------------------------------------------- ATE

def walk(rng, n):
    poses = [Pose.identity()]
    for _ in range(n - 1):
        poses.append(poses[-1] @ random_pose(rng, 0.2, 1.0))
    return poses


def test_ate_trivial_and_rigid():
    rng = np.random.default_rng(10)
    traj = walk(rng, 30)
    assert ate_rmse(traj, traj) == 0.0
    G = random_pose(rng, np.pi, 100.0)
    assert ate_rmse([G @ p for p in traj], traj) < 1e-9
    with pytest.raises(ParameterError):
        ate_rmse(traj[:2], traj[:2])


def test_ate_straight_line_still_defined():
    line = [Pose(np.eye(3), [k, 0, 0]) for k in range(5)]
    assert ate_rmse(line, line) == 0.0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_ate_rigid_invariance(seed):
    rng = np.random.default_rng(seed)
    traj = walk(rng, 12)
    est = [p @ random_pose(rng, 0.05, 0.2) for p in traj]
    G = random_pose(rng, np.pi, 50.0)
    assert abs(ate_rmse([G @ p for p in est], traj) - ate_rmse(est, traj)) < 1e-9


def test_ate_noise_monte_carlo():
    rng = np.random.default_rng(11)
    truth = walk(rng, 1000)
    est = [Pose(p.rotation, p.translation + rng.normal(0, 0.1, 3)) for p in truth]
    value = ate_rmse(est, truth)
    # simulation oracle: the same noise model, fitted with its own least-squares alignment
    sims = []
    Q = np.array([p.translation for p in truth])
    for _ in range(20):
        P = Q + rng.normal(0, 0.1, Q.shape)
        H = (P - P.mean(0)).T @ (Q - Q.mean(0))
        U, _, Vt = np.linalg.svd(H)
        R = Vt.T @ np.diag([1, 1, np.sign(np.linalg.det(Vt.T @ U.T))]) @ U.T
        r = (P - P.mean(0)) @ R.T + Q.mean(0) - Q
        sims.append(np.sqrt(np.mean(np.sum(r**2, axis=1))))
    expected = float(np.mean(sims))
    assert abs(value - expected) / expected < 0.10
    assert abs(value - 0.1 * np.sqrt(3)) / (0.1 * np.sqrt(3)) < 0.10


def test_eval_report_records(tmp_path):
    r = EvalReport(ate_rmse=0.01, f1_max=0.5, extra={"b": 2, "a": 1})
    r.write(tmp_path / "r.jsonl")
    lines = (tmp_path / "r.jsonl").read_text().splitlines()
    assert lines[0] == '{"metric": "ate_rmse", "value": 0.01}'
    assert [l.split('"metric": ')[1].split(",")[0] for l in lines[-2:]] == ['"a"', '"b"']
