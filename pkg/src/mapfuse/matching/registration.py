"""Rigid alignment: closed-form Kabsch and Levenberg-Marquardt GICP.

Poses map source coordinates into the target frame, ``q ~ T p``. GICP steps
are left-multiplicative, ``T <- exp(xi) T`` with ``xi = (omega, v)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DegenerateCorrespondenceError, ParameterError, RegistrationFailedError
from ..geometry import PointCloud, Pose, SpatialIndex
from ..geometry.se3 import hat


def svd_align(source, target=None) -> Pose:
    """Least-squares rigid transform with ``R p + t ~ q`` (Kabsch, reflection corrected).

    ``source`` may also be a :class:`Correspondences`, in which case ``target`` is unused.
    """
    P = np.asarray(getattr(source, "source", source), dtype=float).reshape(-1, 3)
    Q = np.asarray(getattr(source, "target", target), dtype=float).reshape(-1, 3)
    if len(P) != len(Q):
        raise ParameterError(f"{len(P)} source points but {len(Q)} target points")
    if len(P) < 3:
        raise DegenerateCorrespondenceError(f"need at least 3 correspondences, got {len(P)}")
    mp, mq = P.mean(axis=0), Q.mean(axis=0)
    H = (P - mp).T @ (Q - mq)
    U, s, Vt = np.linalg.svd(H)
    if s[0] <= 0 or s[1] <= 1e-10 * s[0]:
        raise DegenerateCorrespondenceError("correspondences are collinear or coincident")
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ np.diag([1.0, 1.0, d if d != 0 else 1.0]) @ U.T
    return Pose(R, mq - R @ mp)


@dataclass(frozen=True)
class GicpParams:
    gate: float = 1.0            # initial correspondence distance gate (m)
    gate_decay: float = 0.7
    gate_every: int = 5          # iterations between gate shrinks
    gate_min: float = 0.3
    inlier_radius: float = 0.45
    max_iter: int = 64
    trans_eps: float = 1e-6
    lm_lambda: float = 1e-4
    lm_tries: int = 12

    def gate_at(self, iteration):
        return max(self.gate_min, self.gate * self.gate_decay ** (iteration // self.gate_every))


@dataclass(frozen=True, eq=False)
class RegistrationResult:
    pose: Pose
    inlier_ratio: float
    alignment_error: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list)   # (cost before, cost after) of accepted steps


def _cost_terms(T: Pose, P, Q, Cp, Cq):
    R = T.rotation
    x = P @ R.T + T.translation
    r = Q - x
    W = np.linalg.inv(Cq + R @ Cp @ R.T)
    return x, r, W


def gicp_cost(T: Pose, P, Q, Cp, Cq):
    """``sum_c r_c^T (Cq_c + R Cp_c R^T)^-1 r_c`` with ``r_c = q_c - T p_c``."""
    _, r, W = _cost_terms(T, P, Q, Cp, Cq)
    return float(np.einsum("ni,nij,nj->", r, W, r))


def _normal_equations(T, P, Q, Cp, Cq):
    x, r, W = _cost_terms(T, P, Q, Cp, Cq)
    J = np.concatenate([hat(x), np.broadcast_to(-np.eye(3), (len(x), 3, 3))], axis=2)   # (n, 3, 6)
    WJ = W @ J
    H = np.einsum("nki,nkj->ij", J, WJ)
    g = np.einsum("nki,nk->i", WJ, r)
    return H, g, float(np.einsum("ni,nij,nj->", r, W, r))


def _lm_step(H, g, lam):
    D = np.diag(H).copy()
    D = np.maximum(D, 1e-9 * max(D.max(), 1e-300))
    A = H + lam * np.diag(D)
    try:
        return np.linalg.solve(A, -g)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(A, -g, rcond=None)[0]


def _gicp_covariances(cloud: PointCloud):
    if cloud.covariances is None:
        raise ParameterError("GICP needs per-point covariances (see with_gicp_covariances)")
    return cloud.covariances


def gicp_refine(source: PointCloud, target: PointCloud, init: Pose = Pose.identity(),
                max_iter: int | None = None, trans_eps: float | None = None,
                params: GicpParams = GicpParams(), target_index: SpatialIndex | None = None) -> RegistrationResult:
    """Refine ``init`` by minimising the point-to-distribution objective.

    Correspondences are re-estimated by nearest neighbour under a shrinking
    distance gate at every iteration; each LM step is accepted only if it
    lowers the objective on those correspondences.
    """
    max_iter = params.max_iter if max_iter is None else max_iter
    trans_eps = params.trans_eps if trans_eps is None else trans_eps
    Cs, Ct = _gicp_covariances(source), _gicp_covariances(target)
    index = target_index or SpatialIndex(target.points)
    P_all = source.points
    T = init
    lam = params.lm_lambda
    history = []
    converged = False
    iterations = 0
    for it in range(max_iter):
        iterations = it + 1
        nn, dist = index.nearest(T.apply(P_all))
        keep = dist <= params.gate_at(it)
        if not np.any(keep):
            if it == 0:
                raise RegistrationFailedError(
                    f"no correspondences within {params.gate_at(it):g} m of the initial alignment")
            break
        P, Q = P_all[keep], target.points[nn[keep]]
        Cp, Cq = Cs[keep], Ct[nn[keep]]
        H, g, cost = _normal_equations(T, P, Q, Cp, Cq)
        accepted = None
        for _ in range(params.lm_tries):
            xi = _lm_step(H, g, lam)
            cand = T.retract(xi)
            new_cost = gicp_cost(cand, P, Q, Cp, Cq)
            if new_cost < cost:
                accepted = (xi, cand, new_cost)
                lam = max(lam * 0.5, 1e-12)
                break
            lam *= 10.0
        if accepted is None:
            converged = True          # no descent direction left on this correspondence set
            break
        xi, T, new_cost = accepted
        history.append((cost, new_cost))
        if np.linalg.norm(xi) < trans_eps:
            converged = True
            break

    nn, dist = index.nearest(T.apply(P_all))
    inlier = dist < params.inlier_radius
    if np.any(inlier):
        _, r, W = _cost_terms(T, P_all[inlier], target.points[nn[inlier]], Cs[inlier], Ct[nn[inlier]])
        error = float(np.einsum("ni,nij,nj->n", r, W, r).mean())
    else:
        error = float("inf")
    return RegistrationResult(T, float(inlier.mean()), error, iterations, converged, history)
