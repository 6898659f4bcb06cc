"""Stochastic gamma-level quantization and exact weighted averaging of levels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ConfigError, LevelOutOfRange, ZeroWeight

DEFAULT_LEVELS = 2 ** 15
DEFAULT_MAX_COUNT = 2 ** 9


@dataclass(frozen=True)
class QuantConfig:
    levels: int = DEFAULT_LEVELS
    w_min: float = -1.0
    w_max: float = 1.0
    # fractions this close to a grid point are treated as on the grid
    snap_tol: float = 1e-9

    def __post_init__(self):
        if int(self.levels) < 2:
            raise ConfigError("levels must be at least 2")
        if not (np.isfinite(self.w_min) and np.isfinite(self.w_max)) or self.w_min >= self.w_max:
            raise ConfigError("need finite bounds with w_min < w_max")
        if not 0.0 <= self.snap_tol < 0.5:
            raise ConfigError("snap_tol must lie in [0, 0.5)")

    @property
    def unit(self) -> float:
        return (self.w_max - self.w_min) / (self.levels - 1)

    @property
    def top(self) -> int:
        return int(self.levels) - 1

    def to_dict(self) -> dict:
        return {"levels": int(self.levels), "w_min": float(self.w_min), "w_max": float(self.w_max)}


@dataclass
class QuantizedUpdate:
    levels: np.ndarray
    weight: int
    clipped: int = 0


def clip(x, cfg: QuantConfig):
    """Clip into the config bounds; returns (clipped array, number of clipped entries)."""
    x = np.asarray(x, dtype=np.float64)
    out = np.clip(x, cfg.w_min, cfg.w_max)
    return out, int(np.count_nonzero(out != x))


def expected_levels(x, cfg: QuantConfig) -> np.ndarray:
    """Real-valued level u = (x - w_min)/unit, the mean of the stochastic level."""
    x, _ = clip(x, cfg)
    return (x - cfg.w_min) / cfg.unit


def quantize(x, cfg: QuantConfig, rng: np.random.Generator) -> np.ndarray:
    """Unbiased stochastic rounding of ``x`` onto the integer grid ``0..levels-1``."""
    return quantize_counted(x, cfg, rng).levels


def quantize_counted(x, cfg: QuantConfig, rng: np.random.Generator, weight: int = 1) -> QuantizedUpdate:
    u = expected_levels(x, cfg)
    _, n_clipped = clip(x, cfg)
    r = rng.random(u.shape) if u.ndim else rng.random()
    z = _kernels.stochastic_round(u, r, cfg.snap_tol)
    return QuantizedUpdate(np.clip(z, 0, cfg.top), int(weight), n_clipped)


def dequantize(z, cfg: QuantConfig):
    z_arr = np.asarray(z, dtype=np.float64)
    if np.any(z_arr < 0) or np.any(z_arr > cfg.top):
        raise LevelOutOfRange(f"levels must lie in [0, {cfg.top}]")
    out = z_arr * cfg.unit + cfg.w_min
    return float(out) if out.ndim == 0 else out


def averaged_dequantize(sum_weighted_levels, total_count, cfg: QuantConfig):
    """Weighted mean update from a sum of count-weighted levels.

    Since every contributor's level carries the same ``w_min`` offset, the
    sum of ``v_i * (z_i*unit + w_min)`` equals ``sum*unit + total*w_min``;
    dividing by the total weight gives the weighted mean with no bias.
    """
    total = np.asarray(total_count, dtype=np.float64)
    if np.any(total <= 0):
        raise ZeroWeight("total_count must be positive")
    s = np.asarray(sum_weighted_levels, dtype=np.float64)
    out = (s * cfg.unit + total * cfg.w_min) / total
    return float(out) if out.ndim == 0 else out


def weight_levels(levels, weight) -> np.ndarray:
    """Multiply levels by integer counts; a count vector scales matching rows."""
    levels = np.asarray(levels, dtype=np.int64)
    weight = np.asarray(weight, dtype=np.int64)
    if weight.ndim == 1 and levels.ndim == 2:
        weight = weight[:, None]
    return levels * weight


def check_capacity(n: int, max_count: int, cfg: QuantConfig, modulus: int) -> None:
    """Static guard that no weighted, summed lane can wrap the modulus."""
    worst = int(n) * int(max_count) * cfg.top
    if worst >= int(modulus):
        raise ConfigError(
            f"n*v_max*(levels-1) = {worst} does not fit modulus {modulus}; "
            "lower levels or max_count, or raise the modulus"
        )


def grid_snap(x, cfg: QuantConfig) -> np.ndarray:
    """Round values to the nearest grid point so quantization is exact."""
    u = np.rint(expected_levels(x, cfg))
    return u * cfg.unit + cfg.w_min
