"""Uniform binning of 2D displacements and the mixture-of-uniforms head.

A classifier over ``n * n`` displacement bins doubles as a density model:
each bin is a uniform component with density ``1 / area`` and the softmax
output gives the mixture proportions.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np


class TrajectoryRangeError(ValueError):
    """A displacement fell outside the grid bounds."""


@dataclass(frozen=True)
class BinGrid:
    n_per_axis: int
    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def __post_init__(self):
        if self.n_per_axis < 1:
            raise ValueError(f"n_per_axis must be >= 1, got {self.n_per_axis}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError("grid bounds must satisfy min < max on both axes")

    @property
    def bin_count(self) -> int:
        return self.n_per_axis**2

    @property
    def bin_width(self) -> tuple[float, float]:
        n = self.n_per_axis
        return ((self.x_max - self.x_min) / n, (self.y_max - self.y_min) / n)

    @property
    def bin_area(self) -> float:
        wx, wy = self.bin_width
        return wx * wy

    @property
    def density(self) -> float:
        """Per-bin uniform density ``c_i`` (identical for every bin)."""
        return 1.0 / self.bin_area

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "BinGrid":
        return cls(
            n_per_axis=int(d["n_per_axis"]),
            x_min=float(d["x_min"]),
            x_max=float(d["x_max"]),
            y_min=float(d["y_min"]),
            y_max=float(d["y_max"]),
        )


TOY_GRID = BinGrid(3, -1.5, 1.5, -1.5, 1.5)
# 11 ft x 11 ft displacement window, 1 ft bins, assumed centered on zero.
BASKETBALL_GRID = BinGrid(11, -5.5, 5.5, -5.5, 5.5)


def _axis_index(value: float, lo: float, hi: float, width: float, n: int, axis: str) -> int:
    if not (lo <= value < hi):
        raise TrajectoryRangeError(f"{axis} displacement {value!r} outside [{lo}, {hi})")
    i = int(math.floor((value - lo) / width))
    # floor can land on n for values a hair below hi
    return min(i, n - 1)


def bin_index(delta, grid: BinGrid) -> int:
    """1-based bin index, row-major over y then x: ``v = i_y * n + i_x + 1``."""
    dx, dy = float(delta[0]), float(delta[1])
    n = grid.n_per_axis
    wx, wy = grid.bin_width
    ix = _axis_index(dx, grid.x_min, grid.x_max, wx, n, "x")
    iy = _axis_index(dy, grid.y_min, grid.y_max, wy, n, "y")
    return iy * n + ix + 1


def bin_indices(deltas: np.ndarray, grid: BinGrid) -> np.ndarray:
    """Vectorized :func:`bin_index` over an ``(..., 2)`` array."""
    deltas = np.asarray(deltas, dtype=np.float64)
    n = grid.n_per_axis
    wx, wy = grid.bin_width
    dx, dy = deltas[..., 0], deltas[..., 1]
    for name, vals, lo, hi in (("x", dx, grid.x_min, grid.x_max), ("y", dy, grid.y_min, grid.y_max)):
        bad = ~((vals >= lo) & (vals < hi))
        if bad.any():
            raise TrajectoryRangeError(
                f"{name} displacement {vals[bad].flat[0]!r} outside [{lo}, {hi})"
            )
    ix = np.minimum(np.floor((dx - grid.x_min) / wx).astype(np.int64), n - 1)
    iy = np.minimum(np.floor((dy - grid.y_min) / wy).astype(np.int64), n - 1)
    return iy * n + ix + 1


def bin_bounds(v: int, grid: BinGrid) -> tuple[float, float, float, float]:
    """Half-open rectangle ``[ax, bx) x [ay, by)`` covered by bin ``v``."""
    n = grid.n_per_axis
    if not (1 <= v <= grid.bin_count):
        raise IndexError(f"bin index {v} outside [1, {grid.bin_count}]")
    iy, ix = divmod(int(v) - 1, n)
    wx, wy = grid.bin_width
    ax = grid.x_min + ix * wx
    ay = grid.y_min + iy * wy
    bx = grid.x_max if ix == n - 1 else grid.x_min + (ix + 1) * wx
    by = grid.y_max if iy == n - 1 else grid.y_min + (iy + 1) * wy
    return ax, bx, ay, by


def bin_center(v: int, grid: BinGrid) -> tuple[float, float]:
    ax, bx, ay, by = bin_bounds(v, grid)
    return (ax + bx) / 2, (ay + by) / 2


def snap_to_bin_center(delta, grid: BinGrid) -> tuple[float, float]:
    return bin_center(bin_index(delta, grid), grid)


def validate_distribution(probs, grid: BinGrid | None = None) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1:
        raise ValueError("bin distribution must be a vector")
    if grid is not None and p.shape[0] != grid.bin_count:
        raise ValueError(f"expected {grid.bin_count} probabilities, got {p.shape[0]}")
    if (p < 0).any() or not np.isfinite(p).all():
        raise ValueError("bin probabilities must be finite and nonnegative")
    if abs(p.sum() - 1.0) > 1e-6:
        raise ValueError(f"bin probabilities sum to {p.sum()}, not 1")
    return p


def mixture_nll(probs, delta, grid: BinGrid) -> float:
    """``-ln(pi_i * c_i)`` for the bin ``i`` containing ``delta``.

    Returns ``inf`` when the containing bin has zero mass.
    """
    p = validate_distribution(probs, grid)
    v = bin_index(delta, grid)
    mass = p[v - 1]
    if mass == 0.0:
        return math.inf
    return -(math.log(mass) + math.log(grid.density))


def mixture_density(probs, delta, grid: BinGrid) -> float:
    p = validate_distribution(probs, grid)
    return float(p[bin_index(delta, grid) - 1] * grid.density)


def sample_bin(probs, rng: np.random.Generator) -> int:
    """Draw a 1-based component index from categorical ``probs``."""
    p = np.asarray(probs, dtype=np.float64)
    cdf = np.cumsum(p)
    u = rng.random() * cdf[-1]
    v = int(np.searchsorted(cdf, u, side="right")) + 1
    return min(v, p.shape[0])


def sample_within_bin(v: int, grid: BinGrid, rng: np.random.Generator) -> tuple[float, float]:
    ax, bx, ay, by = bin_bounds(v, grid)
    ux, uy = rng.random(), rng.random()
    return ax + ux * (bx - ax), ay + uy * (by - ay)


def sample_trajectory(probs, grid: BinGrid, rng: np.random.Generator) -> tuple[float, float]:
    """Pick a component by its proportion, then a uniform point inside it."""
    p = validate_distribution(probs, grid)
    return sample_within_bin(sample_bin(p, rng), grid, rng)
