"""Local descriptors and scan-level place recognition.

A keyframe cloud is turned into keypoints with descriptors. The geometric
embedding that conditions the attention layers uses only distances and angles,
so moving the whole cloud rigidly leaves the descriptors nearly unchanged (the
voxel grid is axis-aligned, so sampling differs slightly). Scan distance, the
mean of the smallest descriptor distances, then ranks candidate keyframes.

The built-in weights are seeded random, not trained: a moved copy is clearly
closer than any other place, but distances between different places carry
little signal. Merging relies on registration gates and clique verification to
sort out the candidates this produces.
"""
import numpy as np

from mapfuse.descriptor import ExtractParams, extract_features, synth_weights
from mapfuse.geometry import PointCloud, random_pose
from mapfuse.matching import inter_scan_distance
from mapfuse.pipeline.synth import generate_scene

scene = generate_scene("two-loop", seed=1, noiseless=True)
weights = synth_weights(0)
params = ExtractParams()
clouds = scene.sessions[0].clouds

# %% descriptors of one keyframe, and of the same keyframe moved rigidly
rng = np.random.default_rng(0)
T = random_pose(rng, np.pi, 20.0)
a = extract_features(clouds[0], weights, params)
b = extract_features(PointCloud(T.apply(clouds[0].points)), weights, params)
print(f"{len(a)} keypoints, descriptor dim {a.descriptors.shape[1]}")
print(f"scan distance to its moved copy: {inter_scan_distance(a.descriptors, b.descriptors, 256):.4f}")

# %% other keyframes of the same session
for kf in (1, 3, 7):
    f = extract_features(clouds[kf], weights, params)
    gap = np.linalg.norm(scene.sessions[0].truth[kf].translation - scene.sessions[0].truth[0].translation)
    print(f"keyframe {kf} ({gap:4.1f} m away): scan distance "
          f"{inter_scan_distance(a.descriptors, f.descriptors, 256):.4f}")
