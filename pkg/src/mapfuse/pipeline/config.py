"""Pipeline configuration: a flat ``key = value`` text file with ``#`` comments.

Unknown keys, repeated keys and out-of-range values are rejected. ``format_config``
writes every key in a fixed order, so parsing and re-serialising any valid file
gives the same canonical text.
"""
from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from ..descriptor import Betas, ExtractParams
from ..errors import ConfigError
from ..graph import OptimizeParams
from ..matching import GicpParams
from ..verification import VerifyParams


@dataclass(frozen=True)
class PipelineConfig:
    voxel_leaf: float = 0.3          # base voxel and registration cloud leaf (m)
    s: int = 256                     # smallest descriptor distances used per scan pair
    k: int = 64                      # dense neighbours aggregated per keypoint
    n_sa: int = 3                    # attention layers
    sigma_d: float = 4.8             # distance scale of the embedding (m); beta_d = 1 / sigma_d
    sigma_n_deg: float = 15.0        # angle scale of the embedding; beta_n = 1 / sigma_n
    descriptor_dim: int = 256
    loop_threshold: float = 0.05     # detect a loop when the best scan distance is below this
    gate_max_error: float = 0.3      # mean NN distance of the aligned inliers (m)
    gate_min_inlier: float = 0.6
    pcm_tol_t: float = 0.5           # cycle translation tolerance (m)
    pcm_tol_r_deg: float = 2.5
    exact_limit: int = 20            # exact clique search up to this many closures per pair
    overlap_min: float = 0.2         # place scan factors between keyframes above this overlap
    overlap_radius: float = 0.45
    n_k: int = 3                     # scan factors per keyframe
    scan_scale: float = 0.01
    scan_gate: float = 0.3           # correspondence gate of scan factors (m)
    gicp_max_iter: int = 64
    max_outer: int = 30
    seed: int = 0                    # keypoint sampling seed
    weights_seed: int = 0            # seed of the built-in weights when no file is given

    def extract_params(self) -> ExtractParams:
        rd, rn = 1.0 / self.sigma_d, 1.0 / np.radians(self.sigma_n_deg)
        return ExtractParams(base_leaf=self.voxel_leaf, k=self.k, seed=self.seed,
                             betas=Betas(rd, rd, rn, rn))

    def verify_params(self) -> VerifyParams:
        return VerifyParams(self.gate_max_error, self.gate_min_inlier, self.pcm_tol_t,
                            float(np.radians(self.pcm_tol_r_deg)), self.exact_limit)

    def gicp_params(self) -> GicpParams:
        return GicpParams(max_iter=self.gicp_max_iter)

    def optimize_params(self) -> OptimizeParams:
        return OptimizeParams(max_outer=self.max_outer, loop_leaf=self.voxel_leaf)


# (lower, upper, lower inclusive); ints are range-checked the same way
_RANGES = {
    "voxel_leaf": (0.0, 10.0, False),
    "s": (1, 1 << 20, True),
    "k": (1, 4096, True),
    "n_sa": (0, 64, True),
    "sigma_d": (0.0, 1e6, False),
    "sigma_n_deg": (0.0, 360.0, False),
    "descriptor_dim": (2, 1 << 16, True),
    "loop_threshold": (0.0, 4.0, False),
    "gate_max_error": (0.0, 100.0, False),
    "gate_min_inlier": (0.0, 1.0, True),
    "pcm_tol_t": (0.0, 1e6, False),
    "pcm_tol_r_deg": (0.0, 180.0, False),
    "exact_limit": (0, 64, True),
    "overlap_min": (0.0, 1.0, True),
    "overlap_radius": (0.0, 100.0, False),
    "n_k": (1, 1000, True),
    "scan_scale": (0.0, 1e6, False),
    "scan_gate": (0.0, 100.0, False),
    "gicp_max_iter": (1, 100000, True),
    "max_outer": (1, 100000, True),
    "seed": (0, 2**32 - 1, True),
    "weights_seed": (0, 2**32 - 1, True),
}
_FIELDS = {f.name: f for f in fields(PipelineConfig)}


def _convert(key, text, where):
    kind = type(getattr(PipelineConfig, key))
    try:
        value = int(text) if kind is int else float(text)
    except ValueError:
        raise ConfigError(f"{where}{key}: expected {'an integer' if kind is int else 'a number'}, "
                          f"got {text!r}") from None
    lo, hi, lo_incl = _RANGES[key]
    below = value < lo if lo_incl else value <= lo
    if not np.isfinite(value) or below or value > hi:
        raise ConfigError(f"{where}{key} = {text} outside {'[' if lo_incl else '('}{lo}, {hi}]")
    return value


def validate(config: PipelineConfig) -> PipelineConfig:
    for key in _FIELDS:
        _convert(key, repr(getattr(config, key)), "")
    if config.descriptor_dim % 2:
        raise ConfigError("descriptor_dim must be even")
    return config


def parse_config(text: str, source: str = "<config>") -> PipelineConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}: "
        key, sep, value = (part.strip() for part in line.partition("="))
        if not sep or not key or not value:
            raise ConfigError(f"{where}expected 'key = value'")
        if key not in _FIELDS:
            raise ConfigError(f"{where}unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{where}{key} given twice")
        values[key] = _convert(key, value, where)
    return validate(PipelineConfig(**values))


def load_config(path=None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from exc
    return parse_config(text, str(path))


def format_config(config: PipelineConfig) -> str:
    return "".join(f"{key} = {getattr(config, key)!r}\n" for key in _FIELDS)


def with_overrides(config: PipelineConfig, **updates) -> PipelineConfig:
    return validate(replace(config, **{k: v for k, v in updates.items() if v is not None}))
