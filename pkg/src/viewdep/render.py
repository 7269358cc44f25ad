"""Forward rendering of a heightfield from orthographic views.

The color seen along a projected ray is

    bg + sum_k G_k * (c_k - c_{k-1}),    G_k = g((o - Y_k) / R)

where ``Y`` is the running maximum of the backtraced boundary intercepts,
``o`` the ray intercept, ``R = h_max - h_min`` and ``c_{-1} = c_n = bg``.
This telescoped sum equals ``sum_k c_k (G_k - G_{k+1})``; it is evaluated
with sequential accumulation so that splitting a strip into equal-colored
parts (subdivision) leaves every pixel bit-identical.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from types import SimpleNamespace

import numpy as np

from .geometry import ViewGeometry, view_geometry
from .heaviside import HeavisideKind, smooth_heaviside, step
from .model import Heightfield, Ray2D, SliceCrossSection, ViewSpec

logger = logging.getLogger(__name__)

__all__ = ["RenderOutput", "MISS", "pixel_color", "render_view", "render_hard", "ray_pass"]

MISS = -1
BLACK = (0.0, 0.0, 0.0)


@dataclass
class RenderOutput:
    image: np.ndarray       # (m, m, 3)
    hit_index: np.ndarray   # (m, m) flat cell index row*cols + col, MISS where nothing was hit
    miss_mask: np.ndarray   # (m, m) bool

    @property
    def image_size(self) -> int:
        return self.image.shape[0]


def pixel_color(slc: SliceCrossSection, y_mono, ray: Ray2D, spec: HeavisideKind | None = None,
                background=BLACK, scale: float = 1.0, form: str = "product", rng=None) -> np.ndarray:
    """Color of one ray on a slice given its monotone boundary intercepts.

    ``spec=None`` uses the exact step.  ``form`` selects the per-strip product
    sum (``"product"``) or the telescoped sum (``"telescoped"``); both are the
    same function.  ``scale`` divides ``o - y`` before the step is applied.
    """
    y = np.asarray(y_mono, dtype=float)
    if y.size != slc.n + 1:
        raise ValueError(f"expected {slc.n + 1} intercepts, got {y.size}")
    x = (ray.intercept - y) / scale
    g = step(x) if spec is None else smooth_heaviside(x, spec, rng)
    bg = np.asarray(background, dtype=float)
    c = np.asarray(slc.colors1d, dtype=float).reshape(-1, 3)
    if form == "product":
        weights = g[:-1] - g[1:]
        return weights @ c + bg * (1.0 - g[0] + g[-1])
    if form == "telescoped":
        ext = np.vstack([bg, c, bg])
        return bg + g @ (ext[1:] - ext[:-1])
    raise ValueError(f"unknown form {form!r}")


def _palette(colors: np.ndarray, background) -> np.ndarray:
    # index -1 selects the background row
    return np.vstack([colors.reshape(-1, 3), np.asarray(background, dtype=float)[None, :]])


def ray_pass(hf: Heightfield, geo: ViewGeometry, spec: HeavisideKind | None, background=BLACK,
             rng: np.random.Generator | None = None, keep: bool = False):
    """Per-ray colors for one view geometry.

    Returns an ``(n_rays, 3)`` array, or with ``keep=True`` a namespace with
    the intermediate arrays needed for the backward pass.
    """
    heights = hf.heights.ravel()
    palette = _palette(hf.colors, background)
    bg = palette[-1]
    P = geo.n_rays
    if geo.vertical:
        color = palette[geo.cells[:, 0]]
        if not keep:
            return color
        return SimpleNamespace(color=color, vertical=True, geo=geo)

    b = np.where(geo.valid, heights[geo.cells] + geo.tan_e * geo.far, -np.inf)
    B = np.concatenate([np.zeros((P, 1)), b], axis=1)
    Y = np.maximum.accumulate(B, axis=1)
    R = hf.height_range
    x = (geo.offset[:, None] - Y) / R
    G = step(x) if spec is None else smooth_heaviside(x, spec, rng)
    ext = np.concatenate([np.broadcast_to(bg, (P, 1, 3)), palette[geo.color_src],
                          np.broadcast_to(bg, (P, 1, 3))], axis=1)
    dc = ext[:, 1:] - ext[:, :-1]
    terms = np.concatenate([np.broadcast_to(bg, (P, 1, 3)), G[:, :, None] * dc], axis=1)
    color = np.cumsum(terms, axis=1)[:, -1]
    if spec is not None and spec.stochastic:
        color = np.clip(color, 0.0, 1.0)
    if not keep:
        return color
    return SimpleNamespace(color=color, vertical=False, geo=geo, B=B, Y=Y, x=x, G=G, dc=dc, R=R)


def _pixel_mean(per_ray: np.ndarray, geo: ViewGeometry) -> np.ndarray:
    m = geo.image_size
    spp = geo.samples * geo.samples
    return per_ray.reshape(m, m, spp, -1).mean(axis=2)


def _view_rng(spec: HeavisideKind | None, view_index: int, stream: int):
    if spec is None or not spec.stochastic:
        return None
    return np.random.default_rng([spec.seed, view_index, stream])


def render_view(hf: Heightfield, view: ViewSpec, spec: HeavisideKind, tiling: int = 1,
                samples: int = 1, background=BLACK, view_index: int = 0, stream: int = 0) -> RenderOutput:
    """Differentiable-path render; hit metadata comes from the exact render."""
    geo = view_geometry(hf.rows, hf.cols, hf.strip_width, view, tiling, samples)
    rng = _view_rng(spec, view_index, stream)
    image = _pixel_mean(ray_pass(hf, geo, spec, background, rng), geo)
    hits = _hits(hf, geo)[0]
    hit_index = hits.reshape(view.image_size, view.image_size, -1)[:, :, 0]
    return RenderOutput(np.clip(image, 0.0, 1.0), hit_index, hit_index == MISS)


def _hits(hf: Heightfield, geo: ViewGeometry):
    """Exact first hit of every ray: (flat cell or MISS, strip position, hit height, side flag)."""
    P = geo.n_rays
    if geo.vertical:
        cells = geo.cells[:, 0].copy()
        z = hf.heights.ravel()[cells]
        return cells, np.zeros(P, dtype=int), z, np.zeros(P, dtype=bool)
    heights = hf.heights.ravel()
    b = np.where(geo.valid, heights[geo.cells] + geo.tan_e * geo.far, -np.inf)
    B = np.concatenate([np.zeros((P, 1)), b], axis=1)
    Y = np.maximum.accumulate(B, axis=1)
    G = geo.offset[:, None] >= Y
    miss = ~G[:, 0] | G[:, -1]
    k = np.argmin(G[:, 1:], axis=1)  # first strip not cleared
    rows = np.arange(P)
    cells = np.where(miss, MISS, geo.cells[rows, k])
    h = heights[geo.cells[rows, k]]
    z_front = geo.offset - geo.tan_e * geo.near[rows, k]
    side = z_front < h
    z = np.where(side, z_front, h)
    return cells, k, z, side & ~miss


def render_hard(hf: Heightfield, view: ViewSpec, tiling: int = 1, samples: int = 1,
                background=BLACK, segments: np.ndarray | None = None) -> RenderOutput:
    """Exact-step render.

    ``segments`` optionally gives per-bar vertical color bands with shape
    ``(rows, cols, n_bands, 3)``; band ``b`` covers side heights
    ``[b, b+1) * h / n_bands`` and the top face belongs to the uppermost band.
    """
    geo = view_geometry(hf.rows, hf.cols, hf.strip_width, view, tiling, samples)
    cells, _, z, side = _hits(hf, geo)
    miss = cells == MISS
    bg = np.asarray(background, dtype=float)
    safe = np.where(miss, 0, cells)
    if segments is None:
        color = hf.colors.reshape(-1, 3)[safe]
    else:
        seg = np.asarray(segments, dtype=float)
        n_bands = seg.shape[2]
        seg = seg.reshape(-1, n_bands, 3)
        h = hf.heights.ravel()[safe]
        with np.errstate(divide="ignore", invalid="ignore"):
            band = np.where(side & (h > 0), np.floor(z / np.where(h > 0, h, 1.0) * n_bands), n_bands - 1)
        band = np.clip(band, 0, n_bands - 1).astype(int)
        color = seg[safe, band]
    color = np.where(miss[:, None], bg, color)
    image = _pixel_mean(color, geo)
    m = view.image_size
    hit_index = cells.reshape(m, m, -1)[:, :, 0]
    return RenderOutput(image, hit_index, hit_index == MISS)


def hit_bands(hf: Heightfield, view: ViewSpec, n_bands: int, tiling: int = 1, samples: int = 1):
    """Per-ray hit cell, band and pixel for color projection."""
    geo = view_geometry(hf.rows, hf.cols, hf.strip_width, view, tiling, samples)
    cells, _, z, side = _hits(hf, geo)
    h = hf.heights.ravel()[np.where(cells == MISS, 0, cells)]
    with np.errstate(divide="ignore", invalid="ignore"):
        band = np.where(side & (h > 0), np.floor(z / np.where(h > 0, h, 1.0) * n_bands), n_bands - 1)
    band = np.clip(band, 0, n_bands - 1).astype(int)
    pixel = np.repeat(np.arange(geo.n_pixels), geo.samples * geo.samples)
    return cells, band, pixel

