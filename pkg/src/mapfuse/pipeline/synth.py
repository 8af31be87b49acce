"""Synthetic multi-session scenes: cluttered rolling terrain seen from waypoint paths.

Every keyframe cloud is sampled independently from the same world within
a horizontal sensing range, perturbed by sensor noise and expressed in the
keyframe's body frame. Session graphs carry noisy odometry (plus one closing
edge for closed paths) and start at the identity, so sessions live in
unrelated frames until they are merged.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from ..errors import ParameterError
from ..geometry import PointCloud, Pose, write_ply
from ..graph import BetweenFactor, Keyframe, SessionGraph, write_graph

SCENARIOS = ("two-loop", "L-corridor", "grid-town")


@dataclass(frozen=True)
class SynthParams:
    sensor_range: float = 7.0
    sensor_height: float = 1.0
    density: float = 12.0              # points per square metre of surface
    spacing: float = 3.0               # metres between keyframes
    sensor_noise: float = 0.005
    odom_sigma_t: float = 0.01
    odom_sigma_r_deg: float = 0.1
    max_tilt_deg: float = 2.0
    min_points: int = 500
    clutter_density: float = 0.3       # objects per square metre before road clearing
    road_half_width: float = 2.0


@dataclass(frozen=True)
class Rect:
    """Planar rectangle ``origin + a u + b v`` with ``a, b`` in [0, 1]."""

    origin: np.ndarray
    u: np.ndarray
    v: np.ndarray

    @property
    def area(self):
        return float(np.linalg.norm(np.cross(self.u, self.v)))


@dataclass(frozen=True, eq=False)
class SyntheticSession:
    truth: list           # world-from-body poses
    clouds: list          # body-frame PointClouds
    graph: SessionGraph


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    name: str
    seed: int
    params: SynthParams
    noiseless: bool
    sessions: dict
    overlaps: dict = field(default_factory=dict)   # planted ((sa, i), (sb, j)) -> ratio


# ---------------------------------------------------------------- world layout

def terrain_height(xy, phase=0.0):
    """Gentle rolling ground, at most about 0.6 m from flat."""
    x, y = xy[..., 0], xy[..., 1]
    return (0.4 * np.sin(0.7 * x + 1.0 + phase) * np.cos(0.5 * y)
            + 0.2 * np.sin(1.3 * y + 0.3 * x + phase))


def _box(cx, cy, sx, sy, h, yaw, z0=0.0):
    c, s = np.cos(yaw), np.sin(yaw)
    ex, ey = np.array([c, s, 0.0]) * sx, np.array([-s, c, 0.0]) * sy
    base = np.array([cx, cy, z0]) - ex / 2 - ey / 2
    up = np.array([0.0, 0.0, h])
    corners = [base, base + ex, base + ex + ey, base + ey]
    walls = [Rect(corners[k], corners[(k + 1) % 4] - corners[k], up) for k in range(4)]
    return walls + [Rect(base + up, ex, ey)]


def _segments_distance(points, paths):
    """Horizontal distance from each xy point to the nearest path segment."""
    best = np.full(len(points), np.inf)
    for path, closed in paths:
        pts = np.asarray(path, float)
        if closed:
            pts = np.vstack([pts, pts[:1]])
        for a, b in zip(pts[:-1], pts[1:]):
            ab = b - a
            t = np.clip(((points - a) @ ab) / (ab @ ab), 0.0, 1.0)
            best = np.minimum(best, np.linalg.norm(points - (a + t[:, None] * ab), axis=1))
    return best


def _scatter_clutter(rng, paths, lo, hi, density, phase, clearance):
    """Boxes and posts of random size and yaw, kept ``clearance`` metres off every path.

    Clutter is what makes places distinguishable: on bare ground every keypoint
    looks alike and descriptor matching has nothing to work with.
    """
    count = rng.poisson(density * np.prod(hi - lo))
    rects = []
    for _ in range(count):
        cx, cy = rng.uniform(lo, hi)
        sx, sy = rng.uniform(0.2, 2.5, 2)
        if rng.random() < 0.25:              # slim posts
            sx = sy = rng.uniform(0.15, 0.4)
        yaw = rng.uniform(0, np.pi)
        h = rng.uniform(0.3, 4.0)
        c, s = np.cos(yaw), np.sin(yaw)
        offs = np.array([[dx * sx / 2, dy * sy / 2] for dx in (-1, 1) for dy in (-1, 1)])
        corners = np.array([cx, cy]) + offs @ np.array([[c, s], [-s, c]])
        probe = np.vstack([corners, [cx, cy], (corners + np.roll(corners, 1, axis=0)) / 2])
        if np.min(_segments_distance(probe, paths)) < clearance:
            continue
        z0 = float(terrain_height(np.array([cx, cy]), phase)) - 0.3
        rects += _box(cx, cy, sx, sy, h + 0.3, yaw, z0)
    return rects


def _layout(name, rng, params):
    """Session waypoint paths ``[(points, closed)]`` and the world's rectangles."""
    if name == "two-loop":
        paths = [(np.array([[0, 0], [12, 0], [12, 9], [0, 9]], float), True),
                 (np.array([[5.5, 0], [17.5, 0], [17.5, 9], [5.5, 9]], float), True)]
    elif name == "L-corridor":
        paths = [(np.array([[0, 0], [24, 0]], float), False),
                 (np.array([[15, 0], [24, 0], [24, 15]], float), False)]
    elif name == "grid-town":
        paths = [(np.array([[0, 0], [9, 0], [9, 9], [0, 9]], float), True),
                 (np.array([[9, 0], [18, 0], [18, 9], [9, 9]], float), True),
                 (np.array([[0, 9], [9, 9], [9, 18], [0, 18]], float), True)]
    else:
        raise ParameterError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    allpts = np.vstack([p for p, _ in paths])
    lo = allpts.min(axis=0) - params.sensor_range - 1
    hi = allpts.max(axis=0) + params.sensor_range + 1
    phase = rng.uniform(0, 2 * np.pi)
    rects = _scatter_clutter(rng, paths, lo, hi, params.clutter_density, phase, params.road_half_width)
    return paths, rects, phase


def _path_poses(rng, path, closed, params: SynthParams, phase=0.0):
    """Evenly spaced world-from-body poses along a polyline, heading along travel."""
    pts = np.asarray(path, float)
    if closed:
        pts = np.vstack([pts, pts[:1]])
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    total = seg.sum()
    n = int(np.floor(total / params.spacing + 1e-9)) + (0 if closed else 1)
    cum = np.r_[0.0, np.cumsum(seg)]
    poses = []
    for k in range(n):
        s = k * params.spacing
        i = min(int(np.searchsorted(cum, s, side="right")) - 1, len(seg) - 1)
        d = (pts[i + 1] - pts[i]) / seg[i]
        xy = pts[i] + d * (s - cum[i])
        tilt = np.radians(params.max_tilt_deg) * rng.uniform(-1, 1, 2)
        R = Rotation.from_euler("zyx", [np.arctan2(d[1], d[0]), tilt[0], tilt[1]]).as_matrix()
        z = float(terrain_height(xy, phase)) + params.sensor_height
        poses.append(Pose(R, [xy[0], xy[1], z]))
    return poses


# ---------------------------------------------------------------- sampling

def _sample_rect(rng, rect: Rect, centre, reach, density):
    """Uniform samples of the part of ``rect`` whose bounding square around ``centre`` is within reach."""
    # restrict the parameter domain to the reach box when the rectangle is axis-aligned in xy
    a_lo, a_hi, b_lo, b_hi = 0.0, 1.0, 0.0, 1.0
    for vec, lo_hi in ((rect.u, "a"), (rect.v, "b")):
        if abs(vec[2]) < 1e-12 and np.count_nonzero(np.abs(vec[:2]) > 1e-12) == 1:
            axis = int(np.argmax(np.abs(vec[:2])))
            lo = (centre[axis] - reach - rect.origin[axis]) / vec[axis]
            hi = (centre[axis] + reach - rect.origin[axis]) / vec[axis]
            lo, hi = max(0.0, min(lo, hi)), min(1.0, max(lo, hi))
            if lo_hi == "a":
                a_lo, a_hi = lo, hi
            else:
                b_lo, b_hi = lo, hi
    if a_hi <= a_lo or b_hi <= b_lo:
        return np.zeros((0, 3))
    n = rng.poisson(density * rect.area * (a_hi - a_lo) * (b_hi - b_lo))
    ab = rng.uniform([a_lo, b_lo], [a_hi, b_hi], (n, 2))
    return rect.origin + ab[:, :1] * rect.u + ab[:, 1:] * rect.v


def _sample_ground(rng, centre, reach, density, phase):
    n = rng.poisson(density * np.pi * reach**2)
    r = reach * np.sqrt(rng.uniform(0, 1, n))
    a = rng.uniform(0, 2 * np.pi, n)
    xy = centre[:2] + np.c_[r * np.cos(a), r * np.sin(a)]
    return np.c_[xy, terrain_height(xy, phase)]


def _keyframe_cloud(rng, rects, pose: Pose, params: SynthParams, phase=0.0):
    centre = pose.translation
    reach = params.sensor_range
    chunks = [_sample_ground(rng, centre, reach, params.density, phase)]
    chunks += [_sample_rect(rng, r, centre, reach, params.density) for r in rects]
    pts = np.vstack(chunks)
    keep = np.linalg.norm(pts[:, :2] - centre[:2], axis=1) <= reach
    pts = pts[keep]
    if params.sensor_noise > 0:
        pts = pts + params.sensor_noise * rng.normal(size=pts.shape)
    return pose.inverse().apply(pts)


def odometry_information(params: SynthParams):
    sr = np.radians(params.odom_sigma_r_deg)
    return np.diag([1 / sr**2] * 3 + [1 / params.odom_sigma_t**2] * 3)


def _noisy_graph(rng, sid, truth, closed, params: SynthParams, noiseless: bool):
    info = odometry_information(params)
    sr = 0.0 if noiseless else np.radians(params.odom_sigma_r_deg)
    st = 0.0 if noiseless else params.odom_sigma_t
    edges = [(k, k + 1) for k in range(len(truth) - 1)]
    if closed and len(truth) > 2:
        edges.append((len(truth) - 1, 0))
    factors, meas = [], {}
    for a, b in edges:
        Z = truth[a].inverse() @ truth[b]
        if sr or st:
            Z = Z @ Pose.exp((np.r_[sr * rng.normal(size=3), st * rng.normal(size=3)]))
        meas[(a, b)] = Z
        factors.append(BetweenFactor(a, b, Z, info))
    poses = [Pose.identity()]
    for k in range(len(truth) - 1):
        poses.append(poses[-1] @ meas[(k, k + 1)])
    return SessionGraph(sid, [Keyframe(k, p) for k, p in enumerate(poses)], factors)


# ---------------------------------------------------------------- planted overlap

EDGE_MARGIN = 0.6      # share of the neighbour radius a point may sit outside the other disc


def planted_overlap(world_a, centre_b, world_b, centre_a, reach, radius):
    """Footprint model of keyframe overlap.

    A point of one keyframe counts as shared when it lies within the other's
    horizontal sensing disc, grown by part of the neighbour radius: points just
    outside the disc find a partner only some of the time, and a margin of
    ``EDGE_MARGIN * radius`` matches nearest-neighbour overlap on these scenes to
    about 0.015.
    """
    grow = reach + EDGE_MARGIN * radius
    f_ab = np.mean(np.linalg.norm(world_a[:, :2] - centre_b[:2], axis=1) <= grow)
    f_ba = np.mean(np.linalg.norm(world_b[:, :2] - centre_a[:2], axis=1) <= grow)
    return float(min(f_ab, f_ba))


def generate_scene(name: str, seed: int = 0, noiseless: bool = False,
                   params: SynthParams = SynthParams(), overlap_radius: float = 0.45) -> SyntheticScene:
    """Deterministic scene for ``name`` and ``seed``.

    ``noiseless`` removes both sensor and odometry noise; the graphs then compose
    exactly to the ground truth.
    """
    if name not in SCENARIOS:
        raise ParameterError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    if noiseless:
        params = SynthParams(**{**params.__dict__, "sensor_noise": 0.0})
    root = np.random.SeedSequence([seed, SCENARIOS.index(name)])
    layout_seed, path_seed, cloud_seed, odom_seed = root.spawn(4)
    paths, rects, phase = _layout(name, np.random.default_rng(layout_seed), params)
    path_rng = np.random.default_rng(path_seed)
    truths = [_path_poses(path_rng, p, closed, params, phase) for p, closed in paths]

    sessions = {}
    world = {}
    cloud_seeds = cloud_seed.spawn(len(paths))
    odom_seeds = odom_seed.spawn(len(paths))
    for sid, ((_, closed), truth) in enumerate(zip(paths, truths)):
        clouds = []
        for kf, (pose, ss) in enumerate(zip(truth, cloud_seeds[sid].spawn(len(truth)))):
            rng = np.random.default_rng(ss)
            pts = _keyframe_cloud(rng, rects, pose, params, phase)
            while len(pts) < params.min_points:
                pts = np.vstack([pts, _keyframe_cloud(rng, rects, pose, params, phase)])
            clouds.append(PointCloud(pts))
            world[(sid, kf)] = pose.apply(pts)
        graph = _noisy_graph(np.random.default_rng(odom_seeds[sid]), sid, truth, closed, params, noiseless)
        sessions[sid] = SyntheticSession(truth, clouds, graph)

    overlaps = {}
    nodes = sorted(world)
    for x, a in enumerate(nodes):
        for b in nodes[x + 1:]:
            if a[0] == b[0]:
                continue
            ca, cb = sessions[a[0]].truth[a[1]].translation, sessions[b[0]].truth[b[1]].translation
            if np.linalg.norm(ca[:2] - cb[:2]) > 2 * params.sensor_range + 2 * overlap_radius:
                continue
            ov = planted_overlap(world[a], cb, world[b], ca, params.sensor_range, overlap_radius)
            if ov > 0:
                overlaps[(a, b)] = ov
    return SyntheticScene(name, seed, params, noiseless, sessions, overlaps)


# ---------------------------------------------------------------- files

def cloud_name(sid, kf):
    return f"s{sid}_kf{kf:03d}"


def format_ground_truth(scene: SyntheticScene) -> str:
    lines = ["# GT session kf x y z qx qy qz qw (world frame)\n"]
    for sid in sorted(scene.sessions):
        for kf, T in enumerate(scene.sessions[sid].truth):
            vals = list(T.translation) + list(T.quaternion())
            lines.append(f"GT {sid} {kf} " + " ".join(repr(float(v)) for v in vals) + "\n")
    return "".join(lines)


def read_ground_truth(path):
    """``{(session, kf): Pose}`` from a ground-truth file."""
    from ..errors import FormatError
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise FormatError(f"{path}: cannot read ({exc.strerror})") from exc
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        tok = line.split()
        if not tok or tok[0].startswith("#"):
            continue
        try:
            if tok[0] != "GT" or len(tok) != 10:
                raise ValueError("expected GT session kf x y z qx qy qz qw")
            out[(int(tok[1]), int(tok[2]))] = Pose.from_quaternion([float(v) for v in tok[3:6]],
                                                                   [float(v) for v in tok[6:10]])
        except (ValueError, ParameterError) as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from exc
    return out


def write_scene(scene: SyntheticScene, out_dir) -> dict:
    """Write clouds, one graph file per session, ground truth and overlap schedule."""
    out = Path(out_dir)
    (out / "clouds").mkdir(parents=True, exist_ok=True)
    (out / "graphs").mkdir(parents=True, exist_ok=True)
    files = {"graphs": []}
    for sid in sorted(scene.sessions):
        sess = scene.sessions[sid]
        kfs = []
        for kf, cloud in enumerate(sess.clouds):
            write_ply(out / "clouds" / f"{cloud_name(sid, kf)}.ply", cloud)
            kfs.append(Keyframe(kf, sess.graph.keyframes[kf].pose, f"../clouds/{cloud_name(sid, kf)}.ply"))
        graph = SessionGraph(sid, kfs, sess.graph.between_factors)
        path = out / "graphs" / f"session{sid}.g2o"
        write_graph(path, [graph], [])
        files["graphs"].append(path)
    (out / "ground_truth.txt").write_text(format_ground_truth(scene))
    lines = ["# session_a kf_a session_b kf_b planted_overlap\n"]
    lines += [f"{a[0]} {a[1]} {b[0]} {b[1]} {v:.6f}\n" for (a, b), v in sorted(scene.overlaps.items())]
    (out / "overlaps.txt").write_text("".join(lines))
    files["ground_truth"] = out / "ground_truth.txt"
    return files
