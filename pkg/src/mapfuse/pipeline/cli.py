"""``mapfuse`` command line.

Every failure prints one line ``E_CODE: message`` on stderr and exits nonzero.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from ..descriptor import WeightBundle, extract_features, write_features
from ..errors import DataError, InputMissingError, MapfuseError
from ..geometry import Pose, read_ply
from ..graph import read_graph, write_graph
from ..metrics import EvalReport, ate_rmse, pr_curve, registration_metrics, write_pr_samples
from .config import PipelineConfig, format_config, load_config, with_overrides
from .merge import (
    check_weights,
    default_weights,
    detect_candidates,
    feature_path,
    load_clouds,
    load_features,
    load_sessions,
    parallel_map,
    read_candidates,
    register_candidate,
    registration_cloud,
    run_merge,
    thread_count,
    write_candidates,
    write_records,
)
from .synth import SCENARIOS, generate_scene, read_ground_truth, write_scene

log = logging.getLogger("mapfuse")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(2, f"E_USAGE: {self.prog}: {message}\n")


def _require(paths):
    for p in paths:
        if not Path(p).is_file():
            raise InputMissingError(f"{p}: no such file")


def _config(args) -> PipelineConfig:
    config = load_config(args.config)
    return with_overrides(config, seed=args.seed)


def _weights(args, config):
    if args.weights is None:
        return default_weights(config)
    _require([args.weights])
    weights = WeightBundle.load(args.weights)
    check_weights(weights, config)
    return weights


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------- commands

def cmd_extract(args):
    if not args.clouds:
        print("warning: no input clouds; nothing to do", file=sys.stderr)
        return 0
    _require(args.clouds)
    config = _config(args)
    weights = _weights(args, config)
    out = _out(args)
    params = config.extract_params()

    def one(path):
        write_features(feature_path(out, path), extract_features(read_ply(path), weights, params))

    parallel_map(one, args.clouds, thread_count())
    return 0


def _sessions_and_features(args, config):
    _require(args.graphs)
    graphs = load_sessions(args.graphs)
    clouds = load_clouds(graphs)
    feats = load_features(graphs, clouds, config, args.features,
                          None if args.features else _weights(args, config), thread_count())
    return graphs, clouds, feats


def cmd_detect_loops(args):
    config = _config(args)
    graphs, _, feats = _sessions_and_features(args, config)
    write_candidates(_out(args) / "candidates.txt", detect_candidates(graphs, feats, config))
    return 0


def cmd_register(args):
    config = _config(args)
    graphs, clouds, feats = _sessions_and_features(args, config)
    if args.candidates:
        _require([args.candidates])
        cands = read_candidates(args.candidates)
    else:
        cands = detect_candidates(graphs, feats, config)
    cands = [c for c in cands if c.detected]
    nodes = sorted({(c.session_a, c.kf_i) for c in cands} | {(c.session_b, c.kf_j) for c in cands})
    missing = [n for n in nodes if n not in clouds]
    if missing:
        raise DataError("candidates reference unknown keyframes: " + ", ".join(f"{s}:{k}" for s, k in missing))
    reg = dict(zip(nodes, parallel_map(lambda n: registration_cloud(clouds[n], config), nodes)))
    closures = [lc for lc in parallel_map(lambda c: register_candidate(c, feats, reg, config), cands)
                if lc is not None]
    write_graph(_out(args) / "closures.g2o", [], closures)
    return 0


def cmd_merge(args):
    config = _config(args)
    _require(args.graphs)
    weights = None if args.features else _weights(args, config)
    result = run_merge(args.graphs, args.out, config, args.features, weights,
                       use_scan_factors=not args.no_scan_factors)
    print(f"merged {len(result.graphs)} sessions with {len(result.verified)} verified closures "
          f"and {result.n_scan_factors} scan factors")
    return 0


def cmd_synth(args):
    scene = generate_scene(args.scenario, args.seed or 0, noiseless=args.noiseless)
    write_scene(scene, args.out)
    n = sum(len(s.clouds) for s in scene.sessions.values())
    print(f"wrote {args.scenario} (seed {args.seed or 0}): {len(scene.sessions)} sessions, {n} keyframes")
    return 0


def cmd_synth_weights(args):
    config = _config(args)
    if args.seed is not None:
        config = with_overrides(config, weights_seed=args.seed)
    path = _out(args) / "weights.gmlw"
    default_weights(config).save(path)
    print(path)
    return 0


def _merged_poses(path):
    graphs, _ = read_graph(path)
    return {(sid, kf): p for sid, g in graphs.items() for kf, p in g.poses().items()}


def cmd_eval(args):
    _require([args.merged, args.ground_truth])
    truth = read_ground_truth(args.ground_truth)
    est = _merged_poses(args.merged)
    unmatched = sorted(set(est) ^ set(truth))
    if unmatched:
        raise DataError("keyframes without a counterpart: " + ", ".join(f"{s}:{k}" for s, k in unmatched))
    nodes = sorted(est)
    report = EvalReport(n_keyframes=len(nodes))
    report.ate_rmse = ate_rmse([est[n] for n in nodes], [truth[n] for n in nodes])
    out = _out(args)

    if args.closures:
        _require([args.closures])
        _, loops = read_graph(args.closures)
        report.n_closures = len(loops)
        if loops:
            gt_rel = [truth[(c.session_a, c.kf_i)].inverse() @ truth[(c.session_b, c.kf_j)] for c in loops]
            reg = registration_metrics([c.relative_pose for c in loops], gt_rel)
            report.te_mean = reg.te_mean
            report.re_mean_deg = float(np.degrees(reg.re_mean))
            report.registration_recall = reg.recall
    if args.candidates:
        _require([args.candidates])
        cands = read_candidates(args.candidates)
        labels = [revisit(truth, c, args.revisit_radius) for c in cands]
        report.extra["revisit_radius"] = args.revisit_radius
        if any(labels):
            curve = pr_curve([-c.distance for c in cands], labels)
            report.f1_max, report.average_precision = curve.f1_max, curve.average_precision
            write_pr_samples(out / "pr.txt", curve)
        else:
            log.warning("no candidate is a true revisit; precision and recall are undefined")
    report.write(out / "eval.jsonl")
    print(f"ATE RMSE {report.ate_rmse:.6f} m over {len(nodes)} keyframes")
    return 0


def revisit(truth: dict, c, radius: float) -> bool:
    """A candidate is a true revisit when its keyframes lie within ``radius`` of each other."""
    a: Pose = truth[(c.session_a, c.kf_i)]
    b: Pose = truth[(c.session_b, c.kf_j)]
    return bool(np.linalg.norm(a.translation - b.translation) <= radius)


def cmd_config(args):
    sys.stdout.write(format_config(_config(args)))
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat key = value configuration file")
    common.add_argument("--seed", type=int, help="seed override")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--weights", help="network weight bundle (defaults to built-in seeded weights)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="mapfuse", description="Multi-session LiDAR map merging")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("extract", parents=[common], help="keypoints and descriptors for each cloud")
    s.add_argument("clouds", nargs="*")
    s.set_defaults(fn=cmd_extract)

    for name, fn, helptext in (("detect-loops", cmd_detect_loops, "best earlier-session match per keyframe"),
                               ("register", cmd_register, "register detected loop candidates")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("graphs", nargs="+")
        s.add_argument("--features", help="directory of feature files (extracted on the fly if omitted)")
        if name == "register":
            s.add_argument("--candidates", help="candidates file from detect-loops")
        s.set_defaults(fn=fn)

    s = sub.add_parser("merge", parents=[common], help="merge sessions into one map")
    s.add_argument("graphs", nargs="+")
    s.add_argument("--features", help="directory of feature files (extracted on the fly if omitted)")
    s.add_argument("--no-scan-factors", action="store_true", help="skip the scan-matching refinement")
    s.set_defaults(fn=cmd_merge)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic multi-session scene")
    s.add_argument("scenario", help=", ".join(SCENARIOS))
    s.add_argument("--noiseless", action="store_true", help="no sensor or odometry noise")
    s.set_defaults(fn=cmd_synth)

    s = sub.add_parser("eval", parents=[common], help="ATE, PR and registration metrics")
    s.add_argument("merged", help="merged graph file")
    s.add_argument("ground_truth", help="ground-truth file")
    s.add_argument("--closures", help="graph file whose LOOP records are scored against ground truth")
    s.add_argument("--candidates", help="candidates file for the precision-recall sweep")
    s.add_argument("--revisit-radius", type=float, default=3.0, help="true-revisit distance (m)")
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("synth-weights", parents=[common], help="write seeded network weights")
    s.set_defaults(fn=cmd_synth_weights)

    s = sub.add_parser("config", parents=[common], help="print the effective configuration")
    s.set_defaults(fn=cmd_config)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.fn(args)
    except MapfuseError as exc:
        msg = " ".join(str(exc).split())
        print(f"{exc.code}: {msg}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"E_IO: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
