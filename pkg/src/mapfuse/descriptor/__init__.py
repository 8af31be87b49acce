from .backbone import Hierarchy, encode_hierarchy, encode_stage, shape_statistics
from .features import ExtractParams, FeatureCloud, extract_features, read_features, write_features
from .keypoints import KeypointResult, detect_keypoints
from .transformer import (
    Betas,
    GeometricEmbedding,
    geometric_embedding,
    pairwise_geometric_embedding,
    plane_attention,
    sinusoidal_embed,
)
from .weights import NetArch, WeightBundle, synth_weights

__all__ = [
    "Betas",
    "ExtractParams",
    "FeatureCloud",
    "GeometricEmbedding",
    "Hierarchy",
    "KeypointResult",
    "NetArch",
    "WeightBundle",
    "detect_keypoints",
    "encode_hierarchy",
    "encode_stage",
    "extract_features",
    "geometric_embedding",
    "pairwise_geometric_embedding",
    "plane_attention",
    "read_features",
    "shape_statistics",
    "sinusoidal_embed",
    "synth_weights",
    "write_features",
]
