"""Binary little-endian PLY reading and writing (vertex x, y, z only)."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import FormatError
from .cloud import PointCloud

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def read_ply(path, frame_id: int = 0) -> PointCloud:
    """Read x, y, z from a binary little-endian PLY; other properties are skipped."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: cannot read ({exc.strerror})") from exc
    end = raw.find(b"end_header\n")
    if not raw.startswith(b"ply") or end < 0:
        raise FormatError(f"{path}: not a PLY file")
    header = raw[:end].decode("ascii", errors="replace").splitlines()
    body = raw[end + len(b"end_header\n"):]

    elements = []
    fmt = None
    for line in header[1:]:
        parts = line.split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise FormatError(f"{path}: property before element")
            if parts[1] == "list":
                raise FormatError(f"{path}: list properties are not supported")
            if parts[1] not in _PLY_TYPES:
                raise FormatError(f"{path}: unknown property type {parts[1]}")
            elements[-1][2].append((parts[2], "<" + _PLY_TYPES[parts[1]]))
    if fmt != "binary_little_endian":
        raise FormatError(f"{path}: only binary_little_endian PLY is supported (got {fmt})")

    offset = 0
    for name, count, props in elements:
        dtype = np.dtype(props)
        nbytes = dtype.itemsize * count
        if name == "vertex":
            names = [p[0] for p in props]
            if not {"x", "y", "z"} <= set(names):
                raise FormatError(f"{path}: vertex element lacks x/y/z")
            if len(body) < offset + nbytes:
                raise FormatError(f"{path}: truncated vertex data")
            rec = np.frombuffer(body, dtype=dtype, count=count, offset=offset)
            pts = np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(float)
            return PointCloud(pts, frame_id)
        offset += nbytes
    raise FormatError(f"{path}: no vertex element")


def write_ply(path, cloud: PointCloud) -> None:
    pts = np.ascontiguousarray(cloud.points, dtype="<f4")
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {len(pts)}\n"
        "property float x\nproperty float y\nproperty float z\nend_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(pts.tobytes())
