"""Evaluation metrics: precision-recall sweeps, registration errors and ATE."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ParameterError, UndefinedMetricsError
from ..geometry import Pose, rotation_angle


@dataclass(frozen=True)
class PRCurve:
    thresholds: np.ndarray      # descending; a pair counts as positive when score >= threshold
    precision: np.ndarray
    recall: np.ndarray
    f1_max: float
    average_precision: float
    best_threshold: float


def pr_curve(scores, labels=None, n_positives: int | None = None) -> PRCurve:
    """Sweep the decision threshold over every distinct score.

    Args:
        scores: similarities (higher means more likely a true match), or a list of
            ``(similarity, is_true_positive)`` pairs when ``labels`` is omitted.
        labels: boolean ground truth for each score.
        n_positives: recall denominator. Defaults to the number of positive labels;
            pass a larger count when some true revisits never reached the candidate list.

    AP integrates the precision envelope (best precision at any recall at least as
    large) over the recall steps.
    """
    if labels is None:
        pairs = list(scores)
        s = np.array([p[0] for p in pairs], float)
        y = np.array([bool(p[1]) for p in pairs])
    else:
        s = np.asarray(scores, float).ravel()
        y = np.asarray(labels, bool).ravel()
    if len(s) != len(y):
        raise ParameterError(f"{len(s)} scores but {len(y)} labels")
    if np.any(~np.isfinite(s)):
        raise ParameterError("scores must be finite")
    total = int(y.sum()) if n_positives is None else int(n_positives)
    if total <= 0:
        raise UndefinedMetricsError("precision and recall are undefined without positive labels")
    if total < y.sum():
        raise ParameterError("n_positives is smaller than the number of positive labels")

    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    tp = np.cumsum(y)
    fp = np.cumsum(~y)
    last = np.r_[s[1:] != s[:-1], True]     # close each group of tied scores
    thresholds = s[last]
    precision = tp[last] / (tp[last] + fp[last])
    recall = tp[last] / total
    with np.errstate(invalid="ignore"):
        f1 = np.where(precision + recall > 0, 2 * precision * recall / (precision + recall), 0.0)
    k = int(np.argmax(f1))
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    steps = np.diff(np.r_[0.0, recall])
    ap = float(np.sum(steps * envelope))
    return PRCurve(thresholds, precision, recall, float(f1[k]), ap, float(thresholds[k]))


@dataclass(frozen=True)
class RegistrationMetrics:
    translation_errors: np.ndarray
    rotation_errors: np.ndarray     # radians
    te_mean: float
    re_mean: float                  # radians
    recall: float
    successes: np.ndarray


def registration_metrics(estimates, truths, max_te: float = 2.0, max_re_deg: float = 5.0) -> RegistrationMetrics:
    """Translation and geodesic rotation errors, and the fraction under both limits.

    Success is strict on both limits: an estimate exactly ``max_re_deg`` off fails.
    """
    estimates, truths = list(estimates), list(truths)
    if len(estimates) != len(truths):
        raise ParameterError(f"{len(estimates)} estimates but {len(truths)} ground-truth poses")
    if not estimates:
        raise UndefinedMetricsError("no registrations to evaluate")
    te = np.array([np.linalg.norm(e.translation - g.translation) for e, g in zip(estimates, truths)])
    re = np.array([rotation_angle(g.rotation.T @ e.rotation) for e, g in zip(estimates, truths)])
    # compare in degrees rounded to 1e-9 so a rotation built as exactly the limit is not
    # admitted by a last-bit rounding error
    ok = (te < max_te) & (np.round(np.degrees(re), 9) < max_re_deg)
    return RegistrationMetrics(te, re, float(te.mean()), float(re.mean()), float(ok.mean()), ok)


def _positions(trajectory) -> np.ndarray:
    rows = [p.translation if isinstance(p, Pose) else p for p in trajectory]
    return np.asarray(rows, float).reshape(-1, 3)


def rigid_align(source: np.ndarray, target: np.ndarray) -> Pose:
    """Rotation and translation minimising ``sum |R s + t - q|^2``, no scale.

    Unlike the correspondence solver used for registration this never refuses
    degenerate input: a straight trajectory still gets some optimal rotation.
    """
    mp, mq = source.mean(axis=0), target.mean(axis=0)
    U, _, Vt = np.linalg.svd((source - mp).T @ (target - mq))
    d = 1.0 if np.linalg.det(Vt.T @ U.T) >= 0 else -1.0
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return Pose(R, mq - R @ mp)


def ate_rmse(estimated, truth) -> float:
    """RMSE of translation residuals after rigidly aligning the estimate onto the truth.

    Both arguments are sequences of :class:`Pose` (or xyz rows) in associated order.
    """
    P, Q = _positions(estimated), _positions(truth)
    if len(P) != len(Q):
        raise ParameterError(f"{len(P)} estimated poses but {len(Q)} ground-truth poses")
    if len(P) < 3:
        raise ParameterError("ATE needs at least 3 associated poses")
    if np.array_equal(P, Q):
        return 0.0
    T = rigid_align(P, Q)
    r = T.apply(P) - Q
    return float(np.sqrt(np.mean(np.einsum("ij,ij->i", r, r))))


@dataclass
class EvalReport:
    ate_rmse: float | None = None
    f1_max: float | None = None
    average_precision: float | None = None
    te_mean: float | None = None
    re_mean_deg: float | None = None
    registration_recall: float | None = None
    n_keyframes: int = 0
    n_closures: int = 0
    extra: dict = field(default_factory=dict)

    def records(self):
        out = []
        for key, value in asdict(self).items():
            if key == "extra":
                out.extend({"metric": k, "value": v} for k, v in sorted(value.items()))
            elif value is not None:
                out.append({"metric": key, "value": value})
        return out

    def write(self, path):
        text = "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records())
        Path(path).write_text(text)


def write_pr_samples(path, curve: PRCurve):
    """Plot-ready columns: threshold, precision, recall."""
    lines = ["# threshold precision recall\n"]
    lines += [f"{t:.9g} {p:.9g} {r:.9g}\n" for t, p, r in zip(curve.thresholds, curve.precision, curve.recall)]
    Path(path).write_text("".join(lines))
