"""Loop closure records, quality gates and pairwise cycle consistency.

A closure between keyframe ``i`` of session ``a`` and keyframe ``j`` of
session ``b`` carries ``relative_pose = Z``, which maps coordinates of
keyframe ``j`` into the frame of keyframe ``i`` (``p_i = Z p_j``).
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..errors import DataError, ParameterError
from ..geometry import Pose

CANDIDATE, GATED, VERIFIED = "candidate", "gated", "verified"
STATUSES = (CANDIDATE, GATED, VERIFIED)


@dataclass(frozen=True)
class LoopClosure:
    session_a: int
    kf_i: int
    session_b: int
    kf_j: int
    relative_pose: Pose
    inlier_ratio: float = 1.0
    alignment_error: float = 0.0
    status: str = CANDIDATE

    def __post_init__(self):
        if (self.session_a, self.kf_i) == (self.session_b, self.kf_j):
            raise ParameterError("a loop closure must join two different keyframes")
        if not isinstance(self.relative_pose, Pose):
            raise ParameterError("relative_pose must be a Pose")
        if not 0.0 <= self.inlier_ratio <= 1.0:
            raise ParameterError(f"inlier ratio {self.inlier_ratio} outside [0, 1]")
        if not self.alignment_error >= 0.0:
            raise ParameterError(f"alignment error must be >= 0, got {self.alignment_error}")
        if self.status not in STATUSES:
            raise ParameterError(f"unknown closure status {self.status!r}")

    @property
    def sessions(self):
        return (self.session_a, self.session_b)

    def reversed(self):
        return replace(self, session_a=self.session_b, kf_i=self.kf_j, session_b=self.session_a,
                       kf_j=self.kf_i, relative_pose=self.relative_pose.inverse())

    def oriented(self, session_a, session_b):
        """The same closure expressed from ``session_a`` to ``session_b``."""
        if self.sessions == (session_a, session_b):
            return self
        if self.sessions == (session_b, session_a):
            return self.reversed()
        raise ParameterError(f"closure joins sessions {self.sessions}, not {(session_a, session_b)}")

    def with_status(self, status):
        return replace(self, status=status)


@dataclass(frozen=True)
class GateDecision:
    accepted: bool
    reasons: tuple = ()


def gate_candidate(lc: LoopClosure, max_error: float = 0.3, min_inlier: float = 0.6) -> GateDecision:
    reasons = []
    if not lc.alignment_error <= max_error:
        reasons.append("alignment_error")
    if not lc.inlier_ratio >= min_inlier:
        reasons.append("inlier_ratio")
    return GateDecision(not reasons, tuple(reasons))


def _lookup(poses, session, kf):
    try:
        return poses[session][kf]
    except (KeyError, IndexError):
        raise DataError(f"no intra-session pose for session {session} keyframe {kf}") from None


def cycle_transform(lc_a: LoopClosure, lc_b: LoopClosure, poses) -> Pose:
    """``(X_ia^-1 X_ib)^-1 Z_a (Y_ja^-1 Y_jb) Z_b^-1``, identity for consistent closures.

    ``poses[session][kf]`` are the intra-session keyframe poses. ``lc_b`` is
    re-oriented to ``lc_a``'s session order first.
    """
    sa, sb = lc_a.sessions
    lc_b = lc_b.oriented(sa, sb)
    X_ia, X_ib = _lookup(poses, sa, lc_a.kf_i), _lookup(poses, sa, lc_b.kf_i)
    Y_ja, Y_jb = _lookup(poses, sb, lc_a.kf_j), _lookup(poses, sb, lc_b.kf_j)
    odo_a = X_ia.inverse() @ X_ib
    odo_b = Y_ja.inverse() @ Y_jb
    return odo_a.inverse() @ lc_a.relative_pose @ odo_b @ lc_b.relative_pose.inverse()


def cycle_error(lc_a, lc_b, poses):
    """(translation, angle) of the worse of the two cycle orientations.

    Both closures are first put in ascending session order, so the result
    does not depend on argument order or on how each closure is oriented.
    """
    lo, hi = sorted(lc_a.sessions)
    lc_a, lc_b = lc_a.oriented(lo, hi), lc_b.oriented(lo, hi)
    errs = []
    for first, second in ((lc_a, lc_b), (lc_b, lc_a)):
        T = cycle_transform(first, second, poses)
        errs.append((float(np.linalg.norm(T.translation)), T.angle()))
    return max(e[0] for e in errs), max(e[1] for e in errs)


def pairwise_consistency(lc_a, lc_b, poses, tol_t: float = 0.5, tol_r: float = np.radians(2.5)) -> bool:
    t, r = cycle_error(lc_a, lc_b, poses)
    return t <= tol_t and r <= tol_r


def consistency_matrix(closures, poses, tol_t=0.5, tol_r=np.radians(2.5)):
    n = len(closures)
    adj = np.eye(n, dtype=bool)
    for a in range(n):
        for b in range(a + 1, n):
            adj[a, b] = adj[b, a] = pairwise_consistency(closures[a], closures[b], poses, tol_t, tol_r)
    return adj
