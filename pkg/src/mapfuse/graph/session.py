"""Session pose graphs and their line-oriented text format.

::

    # session <id>
    # cloud <kf_id> <path>            (optional, path relative to the file)
    VERTEX <kf_id> tx ty tz qx qy qz qw
    EDGE <kf_a> <kf_b> tx ty tz qx qy qz qw i11 i12 ... i66
    LOOP <session_a> <kf_i> <session_b> <kf_j> tx ty tz qx qy qz qw inlier_ratio alignment_error

The 21 information values are the row-major upper triangle of a 6x6 matrix
ordered (translation, rotation) as in g2o; in memory information matrices use
the package's (rotation, translation) tangent order. ``LOOP`` lines carry
verified inter-session closures in merged outputs; they may appear anywhere.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import FormatError, ParameterError
from ..geometry import Pose
from ..verification import VERIFIED, LoopClosure

_SWAP = np.r_[3:6, 0:3]     # file order <-> tangent order (the permutation is its own inverse)
_IU = np.triu_indices(6)


@dataclass(frozen=True)
class Keyframe:
    kf_id: int
    pose: Pose
    cloud: str | None = None    # path of the keyframe cloud, if known


@dataclass(frozen=True, eq=False)
class BetweenFactor:
    kf_a: int
    kf_b: int
    measurement: Pose            # pose of kf_b in the frame of kf_a
    information: np.ndarray      # 6x6, tangent order (rotation, translation)

    def __post_init__(self):
        info = np.array(self.information, dtype=float)
        if info.shape != (6, 6):
            raise ParameterError("information matrix must be 6x6")
        if not np.all(np.isfinite(info)) or np.abs(info - info.T).max() > 1e-9 * max(1.0, np.abs(info).max()):
            raise ParameterError("information matrix must be finite and symmetric")
        if np.linalg.eigvalsh(0.5 * (info + info.T)).min() < -1e-9 * max(1.0, np.abs(info).max()):
            raise ParameterError("information matrix must be positive semi-definite")
        info.setflags(write=False)
        object.__setattr__(self, "information", info)


@dataclass(frozen=True, eq=False)
class SessionGraph:
    session_id: int
    keyframes: list
    between_factors: list = field(default_factory=list)

    def __post_init__(self):
        ids = [k.kf_id for k in self.keyframes]
        if len(set(ids)) != len(ids):
            raise ParameterError(f"session {self.session_id}: duplicate keyframe ids")
        known = set(ids)
        for f in self.between_factors:
            if f.kf_a not in known or f.kf_b not in known:
                raise ParameterError(f"session {self.session_id}: edge {f.kf_a}-{f.kf_b} references an unknown keyframe")

    def __len__(self):
        return len(self.keyframes)

    @property
    def kf_ids(self):
        return [k.kf_id for k in self.keyframes]

    def poses(self):
        """``{kf_id: Pose}``."""
        return {k.kf_id: k.pose for k in self.keyframes}

    def keyframe(self, kf_id):
        for k in self.keyframes:
            if k.kf_id == kf_id:
                return k
        raise KeyError(kf_id)

    def with_poses(self, poses):
        return SessionGraph(self.session_id, [Keyframe(k.kf_id, poses[k.kf_id], k.cloud) for k in self.keyframes],
                            self.between_factors)


def info_to_file_order(info):
    return np.asarray(info)[np.ix_(_SWAP, _SWAP)]


def info_from_upper(values):
    """6x6 tangent-order information from 21 upper-triangular values in file order."""
    M = np.zeros((6, 6))
    M[_IU] = values
    M = M + np.triu(M, 1).T
    return M[np.ix_(_SWAP, _SWAP)]


def _fmt(x):
    return repr(float(x))


def _pose_fields(pose: Pose):
    return [_fmt(v) for v in pose.translation] + [_fmt(v) for v in pose.quaternion()]


def format_session(graph: SessionGraph, base: Path | None = None) -> list[str]:
    lines = [f"# session {graph.session_id}"]
    for kf in graph.keyframes:
        if kf.cloud is not None:
            path = Path(kf.cloud)
            if base is not None and path.is_absolute():
                try:
                    path = path.relative_to(base)
                except ValueError:
                    pass
            lines.append(f"# cloud {kf.kf_id} {path.as_posix()}")
    for kf in graph.keyframes:
        lines.append(" ".join(["VERTEX", str(kf.kf_id)] + _pose_fields(kf.pose)))
    for f in graph.between_factors:
        upper = info_to_file_order(f.information)[_IU]
        lines.append(" ".join(["EDGE", str(f.kf_a), str(f.kf_b)] + _pose_fields(f.measurement)
                              + [_fmt(v) for v in upper]))
    return lines


def format_loop(lc) -> str:
    return " ".join(["LOOP", str(lc.session_a), str(lc.kf_i), str(lc.session_b), str(lc.kf_j)]
                    + _pose_fields(lc.relative_pose) + [_fmt(lc.inlier_ratio), _fmt(lc.alignment_error)])


def write_graph(path, graphs, loops=()):
    """Write one or more sessions (and optional LOOP records) to ``path``."""
    path = Path(path)
    lines = []
    for g in sorted(graphs, key=lambda g: g.session_id):
        lines += format_session(g, path.parent.resolve())
    lines += [format_loop(lc) for lc in loops]
    path.write_text("\n".join(lines) + "\n")


def _floats(tokens, n, path, lineno):
    if len(tokens) != n:
        raise FormatError(f"{path}:{lineno}: expected {n} numbers, got {len(tokens)}")
    try:
        vals = np.array([float(t) for t in tokens])
    except ValueError as exc:
        raise FormatError(f"{path}:{lineno}: {exc}") from None
    if not np.all(np.isfinite(vals)):
        raise FormatError(f"{path}:{lineno}: non-finite value")
    return vals


def _pose(vals, path, lineno):
    try:
        return Pose.from_quaternion(vals[:3], vals[3:7])
    except ParameterError as exc:
        raise FormatError(f"{path}:{lineno}: {exc}") from None


def _int(tok, path, lineno):
    try:
        return int(tok)
    except ValueError:
        raise FormatError(f"{path}:{lineno}: expected an integer id, got {tok!r}") from None


def read_graph(path):
    """Parse a graph file into ``({session_id: SessionGraph}, [LoopClosure])``.

    Files without a ``# session`` header hold a single session with id 0.
    Cloud paths are resolved relative to the file's directory.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise FormatError(f"{path}: cannot read ({exc.strerror})") from exc
    sessions: dict[int, dict] = {}
    loops = []
    current = None

    def session(sid):
        return sessions.setdefault(sid, {"kfs": {}, "edges": [], "clouds": {}})

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        tok = line.split()
        if tok[0] == "#":
            if len(tok) >= 3 and tok[1] == "session":
                current = _int(tok[2], path, lineno)
                session(current)
            elif len(tok) >= 4 and tok[1] == "cloud":
                sid = 0 if current is None else current
                session(sid)["clouds"][_int(tok[2], path, lineno)] = str(path.parent / " ".join(tok[3:]))
            continue
        if line.startswith("#"):
            continue
        kind = tok[0]
        if kind == "LOOP":
            ids = [_int(t, path, lineno) for t in tok[1:5]]
            vals = _floats(tok[5:], 9, path, lineno)
            try:
                loops.append(LoopClosure(ids[0], ids[1], ids[2], ids[3], _pose(vals, path, lineno),
                                         float(vals[7]), float(vals[8]), VERIFIED))
            except ParameterError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
            continue
        sid = 0 if current is None else current
        s = session(sid)
        if kind == "VERTEX":
            kf = _int(tok[1], path, lineno) if len(tok) > 1 else None
            vals = _floats(tok[2:], 7, path, lineno)
            if kf in s["kfs"]:
                raise FormatError(f"{path}:{lineno}: duplicate VERTEX {kf} in session {sid}")
            s["kfs"][kf] = _pose(vals, path, lineno)
        elif kind == "EDGE":
            if len(tok) < 3:
                raise FormatError(f"{path}:{lineno}: truncated EDGE")
            a, b = _int(tok[1], path, lineno), _int(tok[2], path, lineno)
            vals = _floats(tok[3:], 28, path, lineno)
            try:
                s["edges"].append(BetweenFactor(a, b, _pose(vals, path, lineno), info_from_upper(vals[7:])))
            except ParameterError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
        else:
            raise FormatError(f"{path}:{lineno}: unknown record {kind!r}")

    graphs = {}
    for sid, s in sessions.items():
        kfs = [Keyframe(k, p, s["clouds"].get(k)) for k, p in sorted(s["kfs"].items())]
        try:
            graphs[sid] = SessionGraph(sid, kfs, s["edges"])
        except ParameterError as exc:
            raise FormatError(f"{path}: {exc}") from None
    return graphs, loops


def odometry_chain(poses, information):
    """Between factors linking consecutive keyframes of ``{kf_id: Pose}`` exactly."""
    ids = sorted(poses)
    return [BetweenFactor(a, b, poses[a].inverse() @ poses[b], information) for a, b in zip(ids, ids[1:])]
