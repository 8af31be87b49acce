from .descriptors import (
    Correspondences,
    detect_loop,
    distance_matrix,
    inter_scan_distance,
    scan_distances,
    select_correspondences,
    smallest_mean,
)
from .registration import GicpParams, RegistrationResult, gicp_cost, gicp_refine, svd_align

__all__ = [
    "Correspondences",
    "GicpParams",
    "RegistrationResult",
    "detect_loop",
    "distance_matrix",
    "gicp_cost",
    "gicp_refine",
    "inter_scan_distance",
    "scan_distances",
    "select_correspondences",
    "smallest_mean",
    "svd_align",
]
