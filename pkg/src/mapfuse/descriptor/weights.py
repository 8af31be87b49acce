"""Weight bundles for the descriptor network and the ``GMLDW1`` file format.

File layout (all little-endian)::

    b"GMLDW1"
    repeated until EOF:
        u16 name length, utf-8 name, u8 rank, rank x u32 dims,
        prod(dims) x f32 values (row-major)
"""
from __future__ import annotations

import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import FormatError

MAGIC = b"GMLDW1"
N_STATS = 5


@dataclass(frozen=True)
class NetArch:
    """Layer widths of the network; everything else is fixed by the code."""

    stage_dims: tuple = (32, 64, 128)
    dense_dim: int = 64
    keypoint_hidden: tuple = (32, 16)
    descriptor_hidden: int = 256
    dim: int = 256
    layers: int = 3
    geometric_stats: bool = True

    @property
    def stages(self):
        return len(self.stage_dims)

    @property
    def sparse_dim(self):
        return self.stage_dims[-1]

    def shapes(self):
        """Expected name -> shape map."""
        extra = N_STATS if self.geometric_stats else 0
        out = {}
        fan_in = 1
        for s, width in enumerate(self.stage_dims):
            out[f"enc.{s}.weight"] = (fan_in + extra, width)
            out[f"enc.{s}.bias"] = (width,)
            fan_in = width
        if self.stages >= 3:
            up = self.stage_dims[-1]
            for s in range(self.stages - 2, 0, -1):
                out[f"dec.{s}.weight"] = (up + self.stage_dims[s], self.dense_dim)
                out[f"dec.{s}.bias"] = (self.dense_dim,)
                up = self.dense_dim
        dims = (self.dense_dim + 4,) + tuple(self.keypoint_hidden)
        for i in range(len(dims) - 1):
            out[f"kp.score.{i}.weight"] = (dims[i], dims[i + 1])
            out[f"kp.score.{i}.bias"] = (dims[i + 1],)
        out["kp.desc.0.weight"] = (self.sparse_dim + self.dense_dim, self.descriptor_hidden)
        out["kp.desc.0.bias"] = (self.descriptor_hidden,)
        out["kp.desc.1.weight"] = (self.descriptor_hidden, self.dim)
        out["kp.desc.1.bias"] = (self.dim,)
        for name in ("mahalanobis", "euclidean", "normal", "triplet"):
            out[f"embed.{name}"] = (self.dim, self.dim)
        for layer in range(self.layers):
            for proj in ("query", "key", "value", "embedding"):
                out[f"attn.{layer}.{proj}"] = (self.dim, self.dim)
        return out

    @classmethod
    def infer(cls, tensors):
        """Recover the architecture from tensor shapes."""
        try:
            stages = sorted(int(m.group(1)) for n in tensors if (m := re.fullmatch(r"enc\.(\d+)\.weight", n)))
            stage_dims = tuple(tensors[f"enc.{s}.weight"].shape[1] for s in stages)
            geometric = tensors["enc.0.weight"].shape[0] == 1 + N_STATS
            kp = sorted(int(m.group(1)) for n in tensors if (m := re.fullmatch(r"kp\.score\.(\d+)\.weight", n)))
            hidden = tuple(tensors[f"kp.score.{i}.weight"].shape[1] for i in kp)
            dense_dim = tensors["kp.score.0.weight"].shape[0] - 4
            layers = len([n for n in tensors if re.fullmatch(r"attn\.\d+\.query", n)])
            dim = tensors["embed.mahalanobis"].shape[0]
            desc_hidden = tensors["kp.desc.0.weight"].shape[1]
        except (KeyError, IndexError) as exc:
            raise FormatError(f"weight bundle is missing tensor {exc}") from exc
        return cls(stage_dims, dense_dim, hidden, desc_hidden, dim, layers, geometric)


class WeightBundle:
    """Named float tensors matching a :class:`NetArch`.

    Validation happens in the constructor; a bundle that exists is complete
    and finite.
    """

    def __init__(self, tensors, arch: NetArch | None = None):
        tensors = {k: np.array(v, dtype=float) for k, v in tensors.items()}
        arch = arch or NetArch.infer(tensors)
        expected = arch.shapes()
        missing = sorted(set(expected) - set(tensors))
        unknown = sorted(set(tensors) - set(expected))
        if missing or unknown:
            raise FormatError(f"weight bundle mismatch: missing={missing} unexpected={unknown}")
        for name, shape in expected.items():
            if tensors[name].shape != shape:
                raise FormatError(f"tensor {name} has shape {tensors[name].shape}, expected {shape}")
            if not np.all(np.isfinite(tensors[name])):
                raise FormatError(f"tensor {name} has non-finite values")
            tensors[name].setflags(write=False)
        if arch.stages < 2:
            raise FormatError("the encoder needs at least 2 stages")
        if arch.stages == 2 and arch.dense_dim != arch.stage_dims[1]:
            raise FormatError("with 2 stages the dense features are the stage-1 features")
        if arch.dim % 2:
            raise FormatError("descriptor dimension must be even")
        self.arch = arch
        self.tensors = tensors

    def __getitem__(self, name):
        return self.tensors[name]

    def layer(self, prefix):
        return self.tensors[f"{prefix}.weight"], self.tensors[f"{prefix}.bias"]

    def replace(self, **updates):
        """Copy with some tensors swapped (names use ``__`` for ``.``)."""
        tensors = dict(self.tensors)
        for key, value in updates.items():
            tensors[key.replace("__", ".")] = value
        return WeightBundle(tensors)

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            for name in sorted(self.tensors):
                arr = np.ascontiguousarray(self.tensors[name], dtype="<f4")
                raw = name.encode("utf-8")
                fh.write(struct.pack("<H", len(raw)) + raw)
                fh.write(struct.pack("<B", arr.ndim))
                fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
                fh.write(arr.tobytes())

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            data = path.read_bytes()
        except OSError as exc:
            raise FormatError(f"{path}: cannot read ({exc.strerror})") from exc
        if not data.startswith(MAGIC):
            raise FormatError(f"{path}: bad magic, not a GMLDW1 weight file")
        tensors = {}
        pos = len(MAGIC)
        try:
            while pos < len(data):
                (nlen,) = struct.unpack_from("<H", data, pos)
                pos += 2
                name = data[pos:pos + nlen].decode("utf-8")
                pos += nlen
                (rank,) = struct.unpack_from("<B", data, pos)
                pos += 1
                dims = struct.unpack_from(f"<{rank}I", data, pos)
                pos += 4 * rank
                count = int(np.prod(dims)) if rank else 1
                if pos + 4 * count > len(data):
                    raise FormatError(f"{path}: truncated tensor {name}")
                arr = np.frombuffer(data, dtype="<f4", count=count, offset=pos).reshape(dims)
                pos += 4 * count
                if name in tensors:
                    raise FormatError(f"{path}: duplicate tensor {name}")
                tensors[name] = arr.astype(float)
        except (struct.error, UnicodeDecodeError) as exc:
            raise FormatError(f"{path}: corrupt weight file ({exc})") from exc
        try:
            return cls(tensors)
        except FormatError as exc:
            raise FormatError(f"{path}: {exc}") from exc


def synth_weights(seed: int = 0, arch: NetArch | None = None) -> WeightBundle:
    """Seeded random bundle with fan-in scaled Gaussian weights, stored in f32 precision."""
    arch = arch or NetArch()
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in sorted(arch.shapes().items()):
        if len(shape) == 1:
            arr = 0.1 * rng.normal(size=shape)
        else:
            arr = rng.normal(size=shape) / np.sqrt(shape[0])
        # round-trip through f32 so a saved bundle reloads bit-identically
        tensors[name] = arr.astype(np.float32).astype(float)
    return WeightBundle(tensors, arch)
