"""Evaluation metrics and training losses.

Precision-recall sweeps loop-detection scores, registration recall counts
estimates within 2 m and 5 degrees, and ATE measures a trajectory after the best
rigid alignment. The losses are the ones used to train the descriptor network.
"""
import numpy as np

from mapfuse.geometry import Pose, random_pose
from mapfuse.metrics import ate_rmse, chamfer_loss, circle_loss, pr_curve, registration_metrics, transformation_loss

rng = np.random.default_rng(5)

# %% precision-recall over detection scores
labels = rng.random(40) < 0.4
scores = np.where(labels, rng.normal(0.7, 0.15, 40), rng.normal(0.4, 0.15, 40))
curve = pr_curve(scores, labels)
print(f"F1-max {curve.f1_max:.3f}, average precision {curve.average_precision:.3f}")

# %% registration recall
truths = [random_pose(rng, np.pi, 10.0) for _ in range(20)]
estimates = [t @ random_pose(rng, np.radians(8), 3.0) for t in truths]
m = registration_metrics(estimates, truths)
print(f"registration recall {m.recall:.2f}, mean TE {m.te_mean:.2f} m")

# %% ATE ignores where the estimate's frame sits
traj = [random_pose(rng, np.pi, 20.0) for _ in range(30)]
est = [p @ random_pose(rng, 0.01, 0.05) for p in traj]
G = random_pose(rng, np.pi, 100.0)
print(f"ATE {ate_rmse(est, traj):.5f} m, after moving the estimate rigidly {ate_rmse([G @ p for p in est], traj):.5f} m")

# %% losses
F = rng.normal(size=(6, 16))
F /= np.linalg.norm(F, axis=1, keepdims=True)
G_desc = F + 0.1 * rng.normal(size=F.shape)
overlap = np.eye(6) * 0.8
loss, _, _ = circle_loss(F, G_desc, overlap)
print(f"circle loss (matched rows overlap) {loss:.4f}")
pts = rng.normal(size=(100, 3))
T = random_pose(rng, 0.2, 0.5)
print(f"transformation loss {transformation_loss(T, Pose.identity(), pts):.4f}, "
      f"chamfer {chamfer_loss(pts, T.apply(pts)):.4f}")
