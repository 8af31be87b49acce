"""Batch Levenberg-Marquardt over all keyframe poses of all sessions."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from ..errors import ParameterError, UnmergeableSessionError
from ..geometry import Pose
from .factors import PoseFactor, ScanMatchFactor, between_jacobians, between_residual, linearize_scan_match
from .session import SessionGraph


@dataclass(frozen=True)
class OptimizeParams:
    max_outer: int = 30
    tol: float = 1e-9             # stop when the relative cost decrease falls below this
    lm_lambda: float = 1e-4
    lm_up: float = 10.0
    lm_down: float = 0.5
    lm_tries: int = 12
    loop_leaf: float = 0.3        # loop information = inlier_ratio / leaf^2 * I


@dataclass(frozen=True, eq=False)
class MergedMap:
    poses: dict                   # (session, kf_id) -> Pose in the anchor frame
    anchor: tuple
    cost: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list)        # (cost before, cost after) per accepted step
    session_costs: dict = field(default_factory=dict)  # between-factor cost per session
    loop_cost: float = 0.0
    scan_cost: float = 0.0
    empty_scan_factors: list = field(default_factory=list)

    def session_poses(self, session_id):
        return {k: p for (s, k), p in sorted(self.poses.items()) if s == session_id}


def _as_dict(graphs):
    if isinstance(graphs, dict):
        return dict(sorted(graphs.items()))
    return {g.session_id: g for g in sorted(graphs, key=lambda g: g.session_id)}


def anchor_node(graphs):
    graphs = _as_dict(graphs)
    if not graphs:
        raise ParameterError("no sessions to optimise")
    first = next(iter(graphs.values()))
    if len(first) == 0:
        raise ParameterError(f"session {first.session_id} has no keyframes")
    return (first.session_id, first.keyframes[0].kf_id)


def loop_factor(lc, leaf=0.3):
    info = (lc.inlier_ratio / leaf**2) * np.eye(6)
    return PoseFactor((lc.session_a, lc.kf_i), (lc.session_b, lc.kf_j), lc.relative_pose, info, "loop")


def pose_factors(graphs, loops, leaf=0.3):
    out = []
    for sid, g in _as_dict(graphs).items():
        for f in g.between_factors:
            out.append(PoseFactor((sid, f.kf_a), (sid, f.kf_b), f.measurement, f.information))
    out += [loop_factor(lc, leaf) for lc in loops]
    return out


def initial_values(graphs, loops):
    """Anchor-frame poses: each session's own poses carried over by the first loop reaching it.

    Sessions are reached breadth-first from the anchor session through the
    closures in sorted order. Raises :class:`UnmergeableSessionError` for
    sessions no closure chain reaches.
    """
    graphs = _as_dict(graphs)
    anchor = anchor_node(graphs)
    local = {sid: g.poses() for sid, g in graphs.items()}
    offsets = {anchor[0]: local[anchor[0]][anchor[1]].inverse()}
    by_session = {}
    for lc in sorted(loops, key=lambda c: (c.session_a, c.kf_i, c.session_b, c.kf_j)):
        if lc.session_a not in graphs or lc.session_b not in graphs:
            raise ParameterError(f"loop closure references unknown session {lc.sessions}")
        by_session.setdefault(lc.session_a, []).append(lc)
        by_session.setdefault(lc.session_b, []).append(lc.reversed())
    queue = deque([anchor[0]])
    while queue:
        sa = queue.popleft()
        for lc in by_session.get(sa, []):
            sb = lc.session_b
            if sb in offsets:
                continue
            # world <- b-local:  T(a,i) Z Y_j^-1
            offsets[sb] = offsets[sa] @ local[sa][lc.kf_i] @ lc.relative_pose @ local[sb][lc.kf_j].inverse()
            queue.append(sb)
    orphans = [sid for sid in graphs if sid not in offsets]
    if orphans:
        raise UnmergeableSessionError(orphans)
    poses = {}
    for sid, g in graphs.items():
        for kf in g.keyframes:
            poses[(sid, kf.kf_id)] = offsets[sid] @ kf.pose
    poses[anchor] = Pose.identity()
    return poses


def total_cost(poses, factors, scan_factors):
    c = sum(f.cost(poses) for f in factors)
    return c + sum(f.cost(poses[f.node_i], poses[f.node_j]) for f in scan_factors if len(f.correspondences[0]))


def _retract_all(poses, delta, nodes, index):
    out = dict(poses)
    for n in nodes:
        k = index.get(n)
        if k is not None:
            out[n] = poses[n].retract(delta[6 * k:6 * k + 6])
    return out


def optimize(graphs, loops, scan_factors=(), params: OptimizeParams = OptimizeParams(), initial=None) -> MergedMap:
    """Jointly optimise all keyframe poses.

    Between and loop factors contribute ``r^T I r``; scan factors refresh
    their correspondences at the start of every outer iteration and then
    contribute their scaled GICP cost. Each outer iteration takes one LM step
    that must lower the total cost evaluated on the same correspondences.
    """
    graphs = _as_dict(graphs)
    anchor = anchor_node(graphs)
    poses = dict(initial) if initial is not None else initial_values(graphs, loops)
    poses[anchor] = Pose.identity()
    nodes = sorted(poses)
    free = [n for n in nodes if n != anchor]
    index = {n: k for k, n in enumerate(free)}
    dim = 6 * len(free)
    factors = pose_factors(graphs, loops, params.loop_leaf)
    scan_factors = list(scan_factors)
    for f in factors:
        if f.node_a not in poses or f.node_b not in poses:
            raise ParameterError(f"factor references unknown keyframe {f.node_a} or {f.node_b}")

    lam = params.lm_lambda
    history = []
    converged = False
    iterations = 0
    empty = []
    for outer in range(params.max_outer):
        iterations = outer + 1
        H = np.zeros((dim, dim))
        g = np.zeros(dim)
        cost = 0.0
        for f in factors:
            Ta, Tb = poses[f.node_a], poses[f.node_b]
            r = between_residual(Ta, Tb, f.measurement)
            Ja, Jb = between_jacobians(Ta, Tb, r)
            Ir = f.information @ r
            cost += float(r @ Ir)
            for n, J in ((f.node_a, Ja), (f.node_b, Jb)):
                k = index.get(n)
                if k is None:
                    continue
                g[6 * k:6 * k + 6] += J.T @ Ir
                for m, K in ((f.node_a, Ja), (f.node_b, Jb)):
                    l = index.get(m)
                    if l is not None:
                        H[6 * k:6 * k + 6, 6 * l:6 * l + 6] += J.T @ f.information @ K
        empty = []
        for f in scan_factors:
            lin = linearize_scan_match(f, poses[f.node_i], poses[f.node_j], refresh=True)
            if lin.empty:
                empty.append(f.pair)
                continue
            cost += lin.residual
            ki, kj = index.get(f.node_i), index.get(f.node_j)
            if ki is not None:
                H[6 * ki:6 * ki + 6, 6 * ki:6 * ki + 6] += lin.H_ii
                g[6 * ki:6 * ki + 6] += lin.b_i
            if kj is not None:
                H[6 * kj:6 * kj + 6, 6 * kj:6 * kj + 6] += lin.H_jj
                g[6 * kj:6 * kj + 6] += lin.b_j
            if ki is not None and kj is not None:
                H[6 * ki:6 * ki + 6, 6 * kj:6 * kj + 6] += lin.H_ij
                H[6 * kj:6 * kj + 6, 6 * ki:6 * ki + 6] += lin.H_ij.T
        if cost == 0.0 or dim == 0:
            converged = True
            break
        D = np.diag(H).copy()
        D = np.maximum(D, 1e-9 * max(D.max(), 1e-12))
        accepted = None
        for _ in range(params.lm_tries):
            try:
                delta = np.linalg.solve(H + lam * np.diag(D), -g)
            except np.linalg.LinAlgError:
                lam *= params.lm_up
                continue
            cand = _retract_all(poses, delta, nodes, index)
            new_cost = total_cost(cand, factors, scan_factors)
            if new_cost < cost:
                accepted = (cand, new_cost)
                lam = max(lam * params.lm_down, 1e-12)
                break
            lam *= params.lm_up
        if accepted is None:
            converged = True
            break
        poses, new_cost = accepted
        history.append((cost, new_cost))
        if (cost - new_cost) <= params.tol * cost:
            converged = True
            break

    session_costs = {sid: 0.0 for sid in graphs}
    loop_cost = 0.0
    for f in factors:
        c = f.cost(poses)
        if f.kind == "loop":
            loop_cost += c
        else:
            session_costs[f.node_a[0]] += c
    scan_cost = 0.0
    for f in scan_factors:
        f.associate(poses[f.node_i], poses[f.node_j])
        if len(f.correspondences[0]):
            scan_cost += f.cost(poses[f.node_i], poses[f.node_j])
    final = sum(session_costs.values()) + loop_cost + scan_cost
    return MergedMap(poses, anchor, final, iterations, converged, history, session_costs, loop_cost,
                     scan_cost, empty)
