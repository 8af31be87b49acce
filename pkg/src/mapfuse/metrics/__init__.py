from .evaluation import (
    EvalReport,
    PRCurve,
    RegistrationMetrics,
    ate_rmse,
    pr_curve,
    registration_metrics,
    rigid_align,
    write_pr_samples,
)
from .losses import PatchOverlap, chamfer_loss, circle_loss, patch_overlap, total_loss, transformation_loss

__all__ = [
    "EvalReport",
    "PRCurve",
    "PatchOverlap",
    "RegistrationMetrics",
    "ate_rmse",
    "chamfer_loss",
    "circle_loss",
    "patch_overlap",
    "pr_curve",
    "registration_metrics",
    "rigid_align",
    "total_loss",
    "transformation_loss",
    "write_pr_samples",
]
