from .clique import exact_max_clique, greedy_clique, heuristic_max_clique, is_clique, max_clique
from .closures import (
    CANDIDATE,
    GATED,
    VERIFIED,
    GateDecision,
    LoopClosure,
    consistency_matrix,
    cycle_error,
    cycle_transform,
    gate_candidate,
    pairwise_consistency,
)
from .pcm import VerifyParams, verify_closures

__all__ = [
    "CANDIDATE",
    "GATED",
    "VERIFIED",
    "GateDecision",
    "LoopClosure",
    "VerifyParams",
    "consistency_matrix",
    "cycle_error",
    "cycle_transform",
    "exact_max_clique",
    "gate_candidate",
    "greedy_clique",
    "heuristic_max_clique",
    "is_clique",
    "max_clique",
    "pairwise_consistency",
    "verify_closures",
]
