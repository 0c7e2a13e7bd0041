"""Feature maps as latent codes placed on the unit square.

Cell ``(r, c)`` of an ``H x W`` grid sits at ``((c + 0.5) / W, (r + 0.5) / H)``.
Relative offsets are reported in cell units, so each component of a delta
lies in ``[-0.5, 0.5]`` at every pyramid level.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class CoordinateError(ValueError):
    pass


class QueryCoord(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class FeatureGrid:
    level: int
    values: np.ndarray  # (C, H, W)

    @property
    def stride(self) -> int:
        return 2 ** self.level

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]


def _check_unit(xs: np.ndarray, ys: np.ndarray) -> None:
    bad = ~((xs >= 0) & (xs <= 1) & (ys >= 0) & (ys <= 1))
    if bad.any():
        i = int(np.argmax(bad))
        raise CoordinateError(f"query ({xs[i]}, {ys[i]}) outside the unit square")


def nearest_index(coord: np.ndarray, n: int) -> np.ndarray:
    """Index of the nearest of ``n`` evenly spaced centers; ties go low."""
    c0 = np.clip(np.ceil(coord * n).astype(np.int64) - 1, 0, n - 1)
    cand = np.clip(c0[:, None] + np.array([-1, 0, 1]), 0, n - 1)
    dist = np.abs(coord[:, None] - (cand + 0.5) / n)
    return cand[np.arange(len(coord)), dist.argmin(axis=1)]


def nearest_cells(height: int, width: int, xs: np.ndarray, ys: np.ndarray):
    """Vectorized lookup: (rows, cols, dx, dy) with deltas in cell units."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    _check_unit(xs, ys)
    cols = nearest_index(xs, width)
    rows = nearest_index(ys, height)
    # clip only absorbs rounding at the unit-square border
    dx = np.clip((xs - (cols + 0.5) / width) * width, -0.5, 0.5)
    dy = np.clip((ys - (rows + 0.5) / height) * height, -0.5, 0.5)
    return rows, cols, dx, dy


def nearest_latent(grid: FeatureGrid, q: QueryCoord):
    """Nearest code to ``q``, its center, and the cell-unit offset ``q - center``."""
    rows, cols, dx, dy = nearest_cells(grid.height, grid.width, np.array([q[0]]),
                                       np.array([q[1]]))
    r, c = int(rows[0]), int(cols[0])
    center = QueryCoord((c + 0.5) / grid.width, (r + 0.5) / grid.height)
    return grid.values[:, r, c].copy(), center, np.array([dx[0], dy[0]])


def query_array(h_out: int, w_out: int) -> np.ndarray:
    """(h_out * w_out, 2) pixel-center coordinates, row-major, columns (x, y)."""
    if h_out < 1 or w_out < 1:
        raise ValueError(f"output size must be positive, got {h_out}x{w_out}")
    xs = (np.arange(w_out) + 0.5) / w_out
    ys = (np.arange(h_out) + 0.5) / h_out
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def query_grid(h_out: int, w_out: int) -> list[QueryCoord]:
    return [QueryCoord(float(x), float(y)) for x, y in query_array(h_out, w_out)]


def _snap(s: np.ndarray) -> np.ndarray:
    # Rounding in (c + 0.5) / W * W must not blur an exact cell-center hit.
    r = np.rint(s)
    return np.where(np.abs(s - r) <= 1e-12 * np.maximum(np.abs(s), 1.0), r, s)


def bilinear_sample(values: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinear interpolation of a (C, H, W) map at unit-square points -> (Q, C)."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    _check_unit(xs, ys)
    _, H, W = values.shape
    sx = np.clip(_snap(xs * W - 0.5), 0, W - 1)
    sy = np.clip(_snap(ys * H - 0.5), 0, H - 1)
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    tx = (sx - x0)[:, None]
    ty = (sy - y0)[:, None]
    v = values
    top = v[:, y0, x0].T * (1 - tx) + v[:, y0, x1].T * tx
    bot = v[:, y1, x0].T * (1 - tx) + v[:, y1, x1].T * tx
    return top * (1 - ty) + bot * ty


def bilinear_at(grid: FeatureGrid, q: QueryCoord) -> np.ndarray:
    return bilinear_sample(grid.values, np.array([q[0]]), np.array([q[1]]))[0]
