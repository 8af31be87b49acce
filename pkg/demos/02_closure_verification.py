"""Rejecting wrong loop closures with pairwise consistency and a maximum clique.

Two sessions are random walks related by an unknown transform. Six closures
agree with that transform and two are wildly off. Each pair of closures plus the
odometry on both sides forms a cycle; consistent pairs close it. The largest set
of mutually consistent closures is the maximum clique of that graph.
"""
import numpy as np

from mapfuse.geometry import Pose, random_pose
from mapfuse.verification import LoopClosure, consistency_matrix, max_clique, verify_closures

rng = np.random.default_rng(3)


def walk(n):
    poses = [Pose.identity()]
    for _ in range(n - 1):
        poses.append(poses[-1] @ random_pose(rng, 0.3, 2.0))
    return poses


poses = {0: walk(12), 1: walk(12)}
M = random_pose(rng, np.pi, 20.0)          # session 1 frame -> session 0 frame
closures = []
for c in range(8):
    i, j = rng.integers(0, 12, 2)
    noise = random_pose(rng, 0.005, 0.02) if c < 6 else random_pose(rng, 0.5, 5.0)
    Z = poses[0][i].inverse() @ M @ poses[1][j] @ noise
    closures.append(LoopClosure(0, int(i), 1, int(j), Z, 0.95, 0.05))

# %% consistency graph and its maximum clique
adj = consistency_matrix(closures, poses)
print("consistency matrix (closures 6 and 7 are the planted outliers):")
print(adj.astype(int))
print("maximum clique:", max_clique(adj))

# %% the full verification step: gates, then the clique
# "gated" closures passed the registration gates but are not in the clique
for lc in verify_closures(closures, poses):
    print(f"{lc.session_a}:{lc.kf_i:2d} <-> {lc.session_b}:{lc.kf_j:2d}  {lc.status}")
