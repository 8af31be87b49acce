"""Multi-session merging: detect, register, verify, optimise, refine with scan factors.

``merge_sessions`` works on in-memory sessions; ``run_merge`` adds the file
plumbing used by the command line (graph files in, merged graph, merged cloud
and report out).
"""
from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..descriptor import FeatureCloud, WeightBundle, extract_features, read_features, synth_weights
from ..descriptor.weights import NetArch
from ..errors import ConfigError, DataError, DegenerateCorrespondenceError, ParameterError
from ..geometry import PointCloud, read_ply, voxel_downsample, with_gicp_covariances, write_ply
from ..graph import MergedMap, ScanCloud, SessionGraph, optimize, place_scan_match_factors, read_graph, write_graph
from ..matching import gicp_refine, scan_distances, select_correspondences, svd_align
from ..verification import VERIFIED, LoopClosure, verify_closures
from .config import PipelineConfig

log = logging.getLogger(__name__)

FEATURE_SUFFIX = ".gmlf"


def thread_count() -> int:
    """Worker cap from ``MAPFUSE_THREADS``, else the CPU count."""
    raw = os.environ.get("MAPFUSE_THREADS")
    if raw is None or raw.strip() == "":
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"MAPFUSE_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"MAPFUSE_THREADS must be a positive integer, got {raw!r}")
    return n


def parallel_map(fn, items, threads: int | None = None):
    """``[fn(x) for x in items]`` over a thread pool; results keep input order."""
    items = list(items)
    threads = thread_count() if threads is None else threads
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(threads, len(items))) as pool:
        return list(pool.map(fn, items))


def feature_path(feature_dir, cloud_path) -> Path:
    return Path(feature_dir) / (Path(cloud_path).stem + FEATURE_SUFFIX)


def default_weights(config: PipelineConfig) -> WeightBundle:
    arch = NetArch(dim=config.descriptor_dim, layers=config.n_sa)
    return synth_weights(config.weights_seed, arch)


def check_weights(weights: WeightBundle, config: PipelineConfig):
    if weights.arch.dim != config.descriptor_dim:
        raise ConfigError(f"weights produce {weights.arch.dim}-d descriptors, config says {config.descriptor_dim}")
    if weights.arch.layers != config.n_sa:
        raise ConfigError(f"weights hold {weights.arch.layers} attention layers, config says n_sa = {config.n_sa}")


# ---------------------------------------------------------------- stages

@dataclass(frozen=True)
class Candidate:
    """Best earlier-session match of one query keyframe."""

    session_a: int
    kf_i: int
    session_b: int
    kf_j: int
    distance: float
    detected: bool


def detect_candidates(graphs: dict, features: dict, config: PipelineConfig) -> list[Candidate]:
    """For every keyframe of a later session, the closest keyframe of each earlier session.

    ``detected`` marks candidates whose scan distance is below the loop threshold.
    """
    out = []
    sids = sorted(graphs)
    for x, sb in enumerate(sids):
        for sa in sids[:x]:
            kfs_a = graphs[sa].kf_ids
            if not kfs_a:
                continue
            cands = [features[(sa, i)].descriptors for i in kfs_a]
            for j in graphs[sb].kf_ids:
                d = scan_distances(features[(sb, j)].descriptors, cands, config.s)
                best = int(np.argmin(d))
                out.append(Candidate(sa, kfs_a[best], sb, j, float(d[best]), bool(d[best] < config.loop_threshold)))
    return out


def registration_cloud(cloud: PointCloud, config: PipelineConfig) -> PointCloud:
    return with_gicp_covariances(voxel_downsample(cloud, config.voxel_leaf))


def register_candidate(c: Candidate, features: dict, reg_clouds: dict, config: PipelineConfig):
    """Coarse SVD on the top-``s`` descriptor pairs, then GICP; ``None`` if degenerate.

    The closure pose maps keyframe ``j`` (the query) into keyframe ``i``.
    """
    Fj, Fi = features[(c.session_b, c.kf_j)], features[(c.session_a, c.kf_i)]
    s = min(config.s, len(Fj) * len(Fi))
    try:
        corr = select_correspondences(Fj.descriptors, Fi.descriptors, Fj.keypoints, Fi.keypoints, s)
        coarse = svd_align(corr)
    except (DegenerateCorrespondenceError, ParameterError) as exc:
        log.info("candidate %s: %s", c, exc)
        return None
    res = gicp_refine(reg_clouds[(c.session_b, c.kf_j)], reg_clouds[(c.session_a, c.kf_i)], coarse,
                      params=config.gicp_params())
    return LoopClosure(c.session_a, c.kf_i, c.session_b, c.kf_j, res.pose,
                       float(np.clip(res.inlier_ratio, 0.0, 1.0)), float(res.alignment_error))


@dataclass(frozen=True, eq=False)
class MergeResult:
    graphs: dict                 # session id -> SessionGraph with merged poses
    candidates: list
    closures: list               # registered closures, with verification status
    preliminary: MergedMap
    final: MergedMap
    n_scan_factors: int
    records: list = field(default_factory=list)

    @property
    def verified(self):
        return [c for c in self.closures if c.status == VERIFIED]


def merge_sessions(graphs: dict, clouds: dict, features: dict, config: PipelineConfig = PipelineConfig(),
                   use_scan_factors: bool = True, threads: int | None = None) -> MergeResult:
    """Merge sessions into the frame of the lowest session's first keyframe.

    Args:
        graphs: ``{session_id: SessionGraph}``, at least two sessions.
        clouds: ``{(session, kf): PointCloud}`` in keyframe frames.
        features: ``{(session, kf): FeatureCloud}``.
        use_scan_factors: ``False`` skips the scan-matching refinement, so the
            final map equals the preliminary one.

    Raises:
        UnmergeableSessionError: some session has no verified closure chain to the anchor.
    """
    graphs = dict(sorted(graphs.items()))
    if len(graphs) < 2:
        raise ParameterError(f"merging needs at least 2 sessions, got {len(graphs)}")
    nodes = [(sid, kf) for sid, g in graphs.items() for kf in g.kf_ids]
    missing = [n for n in nodes if n not in clouds or n not in features]
    if missing:
        raise DataError("keyframes without cloud or features: " + ", ".join(f"{s}:{k}" for s, k in missing))

    reg_clouds = dict(zip(nodes, parallel_map(lambda n: registration_cloud(clouds[n], config), nodes, threads)))
    candidates = detect_candidates(graphs, features, config)
    detected = [c for c in candidates if c.detected]
    registered = parallel_map(lambda c: register_candidate(c, features, reg_clouds, config), detected, threads)
    closures = [lc for lc in registered if lc is not None]

    local = {sid: g.poses() for sid, g in graphs.items()}
    closures = verify_closures(closures, local, config.verify_params())
    verified = [c for c in closures if c.status == VERIFIED]
    opt = config.optimize_params()
    prelim = optimize(graphs, verified, (), opt)
    n_scan = 0
    final = prelim
    if use_scan_factors:
        scan_clouds = {n: ScanCloud(reg_clouds[n]) for n in nodes}
        factors = place_scan_match_factors(scan_clouds, prelim.poses, config.overlap_min, config.n_k,
                                           config.overlap_radius, config.scan_scale, config.scan_gate)
        n_scan = len(factors)
        if factors:
            final = optimize(graphs, verified, factors, opt, initial=prelim.poses)

    merged = {sid: g.with_poses({kf: final.poses[(sid, kf)] for kf in g.kf_ids}) for sid, g in graphs.items()}
    records = _records(candidates, closures, prelim, final, n_scan)
    return MergeResult(merged, candidates, closures, prelim, final, n_scan, records)


def _records(candidates, closures, prelim: MergedMap, final: MergedMap, n_scan):
    counts = {
        "candidates": len(candidates),
        "closures_found": sum(c.detected for c in candidates),
        "closures_registered": len(closures),
        "closures_gated": sum(c.status != "candidate" for c in closures),
        "closures_verified": sum(c.status == VERIFIED for c in closures),
        "scan_factors": n_scan,
        "preliminary_cost": prelim.cost,
        "final_cost": final.cost,
        "final_iterations": final.iterations,
        "final_converged": final.converged,
        "loop_cost": final.loop_cost,
        "scan_cost": final.scan_cost,
    }
    out = [{"metric": k, "value": v} for k, v in counts.items()]
    out += [{"metric": f"session_residual.{sid}", "value": v} for sid, v in sorted(final.session_costs.items())]
    for c in closures:
        out.append({"metric": "closure", "value": {
            "session_a": c.session_a, "kf_i": c.kf_i, "session_b": c.session_b, "kf_j": c.kf_j,
            "status": c.status, "inlier_ratio": c.inlier_ratio, "alignment_error": c.alignment_error}})
    return out


# ---------------------------------------------------------------- files

def load_sessions(graph_paths) -> dict:
    """Sessions from one or more graph files; a repeated session id gets the next free id."""
    graphs = {}
    for path in graph_paths:
        sessions, _ = read_graph(path)
        for sid, g in sorted(sessions.items()):
            if sid in graphs:
                new = max(graphs) + 1
                log.warning("%s: session %d already loaded, renumbered to %d", path, sid, new)
                g = SessionGraph(new, g.keyframes, g.between_factors)
                sid = new
            graphs[sid] = g
    return graphs


def load_clouds(graphs: dict) -> dict:
    clouds = {}
    for sid, g in graphs.items():
        for kf in g.keyframes:
            if kf.cloud is None:
                raise DataError(f"session {sid} keyframe {kf.kf_id} names no cloud file")
            clouds[(sid, kf.kf_id)] = read_ply(kf.cloud)
    return clouds


def load_features(graphs: dict, clouds: dict, config: PipelineConfig, feature_dir=None,
                  weights: WeightBundle | None = None, threads: int | None = None) -> dict:
    """Feature files from ``feature_dir`` when given, otherwise extracted on the fly."""
    nodes = [(sid, kf.kf_id) for sid, g in graphs.items() for kf in g.keyframes]
    if feature_dir is not None:
        out = {}
        for sid, kf in nodes:
            out[(sid, kf)] = read_features(feature_path(feature_dir, graphs[sid].keyframe(kf).cloud))
            if out[(sid, kf)].dim != config.descriptor_dim:
                raise ConfigError(f"session {sid} keyframe {kf}: {out[(sid, kf)].dim}-d descriptors, "
                                  f"config says {config.descriptor_dim}")
        return out
    weights = default_weights(config) if weights is None else weights
    check_weights(weights, config)
    params = config.extract_params()
    feats = parallel_map(lambda n: extract_features(clouds[n], weights, params), nodes, threads)
    return dict(zip(nodes, feats))


def merged_cloud(graphs: dict, clouds: dict, leaf: float) -> PointCloud:
    parts = [kf.pose.apply(clouds[(sid, kf.kf_id)].points) for sid, g in graphs.items() for kf in g.keyframes]
    return voxel_downsample(PointCloud(np.vstack(parts)), leaf)


def _relative_clouds(graphs: dict, out_dir: Path) -> dict:
    base = out_dir.resolve()
    out = {}
    for sid, g in graphs.items():
        kfs = [type(kf)(kf.kf_id, kf.pose, os.path.relpath(Path(kf.cloud).resolve(), base))
               if kf.cloud is not None else kf for kf in g.keyframes]
        out[sid] = SessionGraph(sid, kfs, g.between_factors)
    return out


def write_candidates(path, candidates):
    lines = ["# session_a kf_i session_b kf_j scan_distance detected\n"]
    lines += [f"CANDIDATE {c.session_a} {c.kf_i} {c.session_b} {c.kf_j} {c.distance!r} {int(c.detected)}\n"
              for c in candidates]
    Path(path).write_text("".join(lines))


def read_candidates(path) -> list[Candidate]:
    from ..errors import FormatError
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise FormatError(f"{path}: cannot read ({exc.strerror})") from exc
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        tok = line.split()
        if not tok or tok[0].startswith("#"):
            continue
        try:
            if tok[0] != "CANDIDATE" or len(tok) != 7:
                raise ValueError("expected CANDIDATE session_a kf_i session_b kf_j distance detected")
            out.append(Candidate(int(tok[1]), int(tok[2]), int(tok[3]), int(tok[4]), float(tok[5]), tok[6] == "1"))
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
    return out


def write_records(path, records):
    Path(path).write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in records))


def write_trajectory(path, poses: dict):
    lines = ["# session kf x y z\n"]
    lines += [f"{s} {k} " + " ".join(repr(float(v)) for v in p.translation) + "\n" for (s, k), p in sorted(poses.items())]
    Path(path).write_text("".join(lines))


def run_merge(graph_paths, out_dir, config: PipelineConfig = PipelineConfig(), feature_dir=None,
              weights: WeightBundle | None = None, use_scan_factors: bool = True) -> MergeResult:
    """Merge graph files and write ``merged.g2o``, ``merged.ply``, ``report.jsonl``,
    ``candidates.txt`` and ``trajectory.txt`` under ``out_dir``."""
    out = Path(out_dir)
    graphs = load_sessions(graph_paths)
    clouds = load_clouds(graphs)
    threads = thread_count()
    features = load_features(graphs, clouds, config, feature_dir, weights, threads)
    result = merge_sessions(graphs, clouds, features, config, use_scan_factors, threads)
    out.mkdir(parents=True, exist_ok=True)
    write_graph(out / "merged.g2o", list(_relative_clouds(result.graphs, out).values()), result.verified)
    write_graph(out / "closures.g2o", [], result.closures)
    write_ply(out / "merged.ply", merged_cloud(result.graphs, clouds, config.voxel_leaf))
    write_candidates(out / "candidates.txt", result.candidates)
    write_records(out / "report.jsonl", result.records)
    write_trajectory(out / "trajectory.txt", result.final.poses)
    return result
