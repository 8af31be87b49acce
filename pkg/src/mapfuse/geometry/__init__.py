from .cloud import (
    PointCloud,
    canonical_normal,
    estimate_covariance_normal,
    estimate_covariances_normals,
    plane_regularized_covariances,
    transform_cloud,
    voxel_downsample,
    with_gicp_covariances,
)
from .index import SpatialIndex
from .ply import read_ply, write_ply
from .se3 import Pose, pose_error, random_pose, relative, rotation_angle, se3_exp, se3_log

__all__ = [
    "PointCloud",
    "Pose",
    "SpatialIndex",
    "canonical_normal",
    "estimate_covariance_normal",
    "estimate_covariances_normals",
    "plane_regularized_covariances",
    "pose_error",
    "random_pose",
    "read_ply",
    "relative",
    "rotation_angle",
    "se3_exp",
    "se3_log",
    "transform_cloud",
    "voxel_downsample",
    "with_gicp_covariances",
    "write_ply",
]
