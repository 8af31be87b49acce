"""Gate then pairwise-consistency maximisation, one session pair at a time."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clique import max_clique
from .closures import CANDIDATE, GATED, VERIFIED, LoopClosure, consistency_matrix, gate_candidate


@dataclass(frozen=True)
class VerifyParams:
    max_error: float = 0.3
    min_inlier: float = 0.6
    tol_t: float = 0.5
    tol_r: float = float(np.radians(2.5))
    exact_limit: int = 20


def verify_closures(closures: list[LoopClosure], poses, params: VerifyParams = VerifyParams()):
    """Statuses for every closure.

    Closures failing a gate stay ``candidate``; those passing become ``gated``
    and, if they belong to the maximum consistent set of their session pair,
    ``verified``. Input order is preserved.
    """
    out = list(closures)
    groups = {}
    for idx, lc in enumerate(closures):
        if gate_candidate(lc, params.max_error, params.min_inlier).accepted:
            groups.setdefault(tuple(sorted(lc.sessions)), []).append(idx)
        else:
            out[idx] = lc.with_status(CANDIDATE)
    for (sa, sb), members in sorted(groups.items()):
        oriented = [closures[i].oriented(sa, sb) for i in members]
        adj = consistency_matrix(oriented, poses, params.tol_t, params.tol_r)
        keep = set(max_clique(adj, params.exact_limit))
        for pos, idx in enumerate(members):
            out[idx] = closures[idx].with_status(VERIFIED if pos in keep else GATED)
    return out
