from .factors import (
    PoseFactor,
    ScanCloud,
    ScanLinearization,
    ScanMatchFactor,
    between_jacobians,
    between_residual,
    linearize_scan_match,
    se3_right_jacobian_inv,
)
from .optimizer import MergedMap, OptimizeParams, anchor_node, initial_values, loop_factor, optimize, pose_factors
from .overlap import compute_overlap, overlap_matrix, place_scan_match_factors, select_scan_pairs
from .session import (
    BetweenFactor,
    Keyframe,
    SessionGraph,
    format_loop,
    info_from_upper,
    info_to_file_order,
    odometry_chain,
    read_graph,
    write_graph,
)

__all__ = [
    "BetweenFactor",
    "Keyframe",
    "MergedMap",
    "OptimizeParams",
    "PoseFactor",
    "ScanCloud",
    "ScanLinearization",
    "ScanMatchFactor",
    "SessionGraph",
    "anchor_node",
    "between_jacobians",
    "between_residual",
    "compute_overlap",
    "format_loop",
    "info_from_upper",
    "info_to_file_order",
    "initial_values",
    "linearize_scan_match",
    "loop_factor",
    "odometry_chain",
    "optimize",
    "overlap_matrix",
    "place_scan_match_factors",
    "pose_factors",
    "read_graph",
    "se3_right_jacobian_inv",
    "select_scan_pairs",
    "write_graph",
]
