"""Vectorized per-ray slice tables.

Slicing depends only on the grid shape, strip width and view, never on the
heights or colors, so a view's slices are computed once per resolution and
reused by every render and gradient evaluation.  Each ray row holds its
strips padded to a common length; padded or zero-width entries are marked
invalid and contribute nothing.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .model import ViewSpec, travel_direction

__all__ = ["ViewGeometry", "view_geometry", "sample_offsets"]


@dataclass(frozen=True)
class ViewGeometry:
    rows: int
    cols: int
    strip_width: float
    image_size: int
    samples: int  # rays per pixel (samples x samples stratified grid)
    vertical: bool
    tan_e: float
    cells: np.ndarray      # (P, S) flat cell index row*cols + col (0 where invalid)
    valid: np.ndarray      # (P, S)
    near: np.ndarray       # (P, S) slice coordinate of each strip's near edge
    far: np.ndarray        # (P, S) slice coordinate of each strip's far edge
    color_src: np.ndarray  # (P, S) forward-filled cell index, -1 = background
    offset: np.ndarray     # (P,) ray intercept at slice coordinate 0
    line_id: np.ndarray    # (P,)

    @property
    def n_rays(self) -> int:
        return self.cells.shape[0]

    @property
    def n_pixels(self) -> int:
        return self.image_size * self.image_size


def sample_offsets(samples: int) -> np.ndarray:
    """Stratified sub-pixel offsets in (0, 1), cell centers of a samples x samples grid."""
    return (np.arange(samples) + 0.5) / samples


def view_geometry(rows: int, cols: int, strip_width: float, view: ViewSpec,
                  tiling: int = 1, samples: int = 1) -> ViewGeometry:
    return _view_geometry(int(rows), int(cols), float(strip_width), float(view.elevation_deg),
                          float(view.azimuth_deg), int(view.image_size), int(tiling), int(samples))


@lru_cache(maxsize=64)
def _view_geometry(rows, cols, w, elevation, azimuth, m, tiling, samples) -> ViewGeometry:
    if tiling < 1 or samples < 1:
        raise ValueError("tiling and samples must be >= 1")
    X, Y = cols * w, rows * w
    unit = tiling // 2
    sub = sample_offsets(samples)
    # ray-major order: pixel (r, c) then sample (a, b)
    r, c, a, b = np.meshgrid(np.arange(m), np.arange(m), np.arange(samples), np.arange(samples),
                             indexing="ij")
    qx = (c.ravel() + sub[b.ravel()]) * X / m + unit * X
    qy = (r.ravel() + sub[a.ravel()]) * Y / m + unit * Y
    n_rays = qx.size

    if elevation == 90.0:
        j = np.clip(np.floor(qx / w).astype(int), 0, tiling * cols - 1) % cols
        i = np.clip(np.floor(qy / w).astype(int), 0, tiling * rows - 1) % rows
        cells = (i * cols + j)[:, None]
        ones = np.ones((n_rays, 1), dtype=bool)
        zeros = np.zeros((n_rays, 1))
        geo = ViewGeometry(rows, cols, w, m, samples, True, math.inf, cells, ones, zeros, zeros,
                           cells.copy(), np.zeros(n_rays), np.arange(n_rays))
        _freeze(geo)
        return geo

    ux, uy = travel_direction(azimuth)
    XT, YT = tiling * X, tiling * Y
    t_lo = np.full(n_rays, -np.inf)
    t_hi = np.full(n_rays, np.inf)
    crossings = []
    for q, d, size, n in ((qx, ux, XT, tiling * cols), (qy, uy, YT, tiling * rows)):
        if d == 0.0:
            continue
        t0, t1 = (0.0 - q) / d, (size - q) / d
        t_lo = np.maximum(t_lo, np.minimum(t0, t1))
        t_hi = np.minimum(t_hi, np.maximum(t0, t1))
        crossings.append((np.arange(n + 1)[None, :] * w - q[:, None]) / d)
    t_all = np.concatenate([t_lo[:, None], t_hi[:, None]] + crossings, axis=1)
    inside = (t_all >= t_lo[:, None]) & (t_all <= t_hi[:, None])
    t_all = np.sort(np.where(inside, t_all, np.inf), axis=1)
    n_finite = inside.sum(axis=1)
    width_cols = int(n_finite.max()) - 1
    t_all = t_all[:, : width_cols + 1]
    t0, t1 = t_all[:, :-1], t_all[:, 1:]
    with np.errstate(invalid="ignore"):
        widths = t1 - t0
    valid = np.isfinite(t1) & (widths > 1e-12 * w)
    mid = np.where(valid, 0.5 * (t0 + t1), 0.0)
    j = np.clip(np.floor((qx[:, None] + mid * ux) / w).astype(int), 0, tiling * cols - 1) % cols
    i = np.clip(np.floor((qy[:, None] + mid * uy) / w).astype(int), 0, tiling * rows - 1) % rows
    cells = np.where(valid, i * cols + j, 0)
    near = np.where(valid, t0 - t_lo[:, None], 0.0)
    far = np.where(valid, t1 - t_lo[:, None], 0.0)

    idx = np.where(valid, np.arange(valid.shape[1])[None, :], -1)
    last = np.maximum.accumulate(idx, axis=1)
    color_src = np.where(last >= 0, np.take_along_axis(cells, np.maximum(last, 0), axis=1), -1)

    tan_e = math.tan(math.radians(elevation))
    offset = tan_e * (-t_lo)
    perp = (-uy * qx + ux * qy) / max(XT, YT)
    _, line_id = np.unique(np.round(perp, 9), return_inverse=True)
    geo = ViewGeometry(rows, cols, w, m, samples, False, tan_e, cells, valid, near, far,
                       color_src, offset, line_id.ravel())
    _freeze(geo)
    return geo


def _freeze(geo: ViewGeometry) -> None:
    for name in ("cells", "valid", "near", "far", "color_src", "offset", "line_id"):
        getattr(geo, name).setflags(write=False)
