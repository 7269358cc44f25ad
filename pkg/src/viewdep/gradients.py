"""Reverse-mode gradients of the objective with respect to heights and colors.

The chain per ray is: heights -> far-corner intercepts -> running maximum ->
surrogate steps -> telescoped color sum -> squared error.  Colors enter the
color sum linearly.  The running maximum routes each output to the first
input attaining it; clamped (fully occluded) intercepts receive nothing.
All scatters use ``np.bincount`` so repeated runs are bit-identical.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from .geometry import view_geometry
from .heaviside import HeavisideKind, heaviside_deriv
from .model import Heightfield, ViewSpec
from .objective import (LossConfig, LossTerms, barrier_grad, combine, mse_loss, neighbor_grad, regularizers,
                        total_loss)
from .render import MISS, _hits, _pixel_mean, _view_rng, ray_pass

logger = logging.getLogger(__name__)

__all__ = ["GradientSet", "GradientError", "backward", "grad_check", "GradCheckReport"]


class GradientError(FloatingPointError):
    """Non-finite gradient; the message names the pixel and strip."""


@dataclass
class GradientSet:
    d_heights: np.ndarray
    d_colors: np.ndarray

    def __post_init__(self) -> None:
        if self.d_colors.shape != self.d_heights.shape + (3,):
            raise ValueError("gradient shapes disagree")


def first_argmax_routing(B: np.ndarray) -> np.ndarray:
    """Index of the first input attaining each running maximum along axis 1."""
    prev = np.concatenate([np.full((B.shape[0], 1), -np.inf), np.maximum.accumulate(B, axis=1)[:, :-1]], axis=1)
    is_new = B > prev
    idx = np.where(is_new, np.arange(B.shape[1])[None, :], 0)
    return np.maximum.accumulate(idx, axis=1)


def _view_backward(hf: Heightfield, view: ViewSpec, v: int, spec: HeavisideKind, n_views: int,
                   cfg: LossConfig, tiling: int, stream: int, details: dict | None):
    geo = view_geometry(hf.rows, hf.cols, hf.strip_width, view, tiling)
    rng = _view_rng(spec, v, stream)
    fw = ray_pass(hf, geo, spec, rng=rng, keep=True)
    image = np.clip(_pixel_mean(fw.color, geo), 0.0, 1.0)
    m = view.image_size
    cells_hit = _hits(hf, geo)[0]
    miss = (cells_hit.reshape(m, m, -1)[:, :, 0] == MISS)
    mask = miss if cfg.background_policy == "mask" else None

    resid = image - view.desired
    g_pix = 2.0 * resid / (3.0 * m * m * n_views)
    if mask is not None:
        g_pix = np.where(mask[:, :, None], 0.0, g_pix)
    spp = geo.samples * geo.samples
    g_ray = np.repeat(g_pix.reshape(-1, 3), spp, axis=0) / spp

    n_cells = hf.rows * hf.cols
    d_h = np.zeros(n_cells)
    d_c = np.zeros((n_cells, 3))
    if fw.vertical:
        for ch in range(3):
            d_c[:, ch] = np.bincount(geo.cells[:, 0], weights=g_ray[:, ch], minlength=n_cells)
        return image, mask, d_h, d_c

    G = fw.G
    weights = np.where(geo.valid, G[:, :-1] - G[:, 1:], 0.0)
    flat_cells = geo.cells.ravel()
    for ch in range(3):
        contrib = (weights * g_ray[:, ch:ch + 1]).ravel()
        d_c[:, ch] = np.bincount(flat_cells, weights=contrib, minlength=n_cells)

    dL_dG = np.einsum("pkc,pc->pk", fw.dc, g_ray)
    dL_dY = -dL_dG * heaviside_deriv(fw.x, spec) / fw.R
    route = first_argmax_routing(fw.B)
    P, S1 = fw.B.shape
    flat = (np.arange(P)[:, None] * S1 + route).ravel()
    dL_dB = np.bincount(flat, weights=dL_dY.ravel(), minlength=P * S1).reshape(P, S1)
    strip_grad = np.where(geo.valid, dL_dB[:, 1:], 0.0)
    if not np.all(np.isfinite(strip_grad)):
        p, k = np.argwhere(~np.isfinite(strip_grad))[0]
        pixel = divmod(int(p) // spp, m)
        raise GradientError(f"non-finite height gradient at view {v} pixel {pixel} strip {int(k)}")
    d_h = np.bincount(flat_cells, weights=strip_grad.ravel(), minlength=n_cells)
    if details is not None:
        details.setdefault("strip_grads", []).append(strip_grad)
    return image, mask, d_h, d_c


def backward(hf: Heightfield, views: list[ViewSpec], spec: HeavisideKind,
             cfg: LossConfig = LossConfig(), tiling: int = 1, stream: int = 0,
             details: dict | None = None) -> tuple[LossTerms, GradientSet]:
    """Objective value and its gradient with respect to every height and color.

    ``stream`` selects the random draws of the Bernoulli kinds; their backward
    pass uses the derivative of the success probability.
    """
    if spec is None:
        raise ValueError("backward needs a surrogate step (spec=None has no height gradient)")
    rows, cols = hf.rows, hf.cols
    d_h = np.zeros(rows * cols)
    d_c = np.zeros((rows * cols, 3))
    images, masks = [], []
    for v, view in enumerate(views):
        image, mask, dh, dc = _view_backward(hf, view, v, spec, len(views), cfg, tiling, stream, details)
        images.append(image)
        masks.append(mask)
        d_h += dh
        d_c += dc
    mse = mse_loss(images, [view.desired for view in views], masks)
    barrier, neighbor = regularizers(hf, cfg)
    terms = combine(mse, barrier, neighbor, cfg)
    d_h = d_h.reshape(rows, cols)
    if cfg.effective_barrier > 0:
        d_h = d_h + cfg.effective_barrier * barrier_grad(hf)
    if cfg.effective_neighbor > 0:
        d_h = d_h + cfg.effective_neighbor * neighbor_grad(hf)
    grads = GradientSet(d_h, d_c.reshape(rows, cols, 3))
    if not (np.all(np.isfinite(grads.d_heights)) and np.all(np.isfinite(grads.d_colors))):
        bad = np.argwhere(~np.isfinite(grads.d_heights))
        raise GradientError(f"non-finite gradient at bar {tuple(bad[0]) if len(bad) else '?'}")
    return terms, grads


@dataclass
class GradCheckReport:
    rows: list = field(default_factory=list)  # (param, index, analytic, numeric, rel_error)
    max_rel_error: float = 0.0
    mean_rel_error: float = 0.0
    worst: tuple | None = None
    flagged: list = field(default_factory=list)

    def to_text(self) -> str:
        lines = [f"probes: {len(self.rows)}",
                 f"max relative error: {self.max_rel_error:.3e}",
                 f"mean relative error: {self.mean_rel_error:.3e}",
                 f"worst coordinate: {self.worst}"]
        if self.flagged:
            lines.append(f"flagged (high curvature, step > {FLAG_ERROR:g} rel. error): {len(self.flagged)}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["param", "index", "analytic", "numeric", "rel_error"])
        for name, index, a, n, e in self.rows:
            writer.writerow([name, "/".join(map(str, index)), repr(a), repr(n), repr(e)])
        return buf.getvalue()


FLAG_ERROR = 1e-3


def relative_error(a: float, n: float, floor: float = 0.0) -> float:
    """``|a - n| / max(|a|, |n|, floor)``.

    ``floor`` is the round-off level of the difference quotient; gradients
    below it cannot be resolved by finite differences.
    """
    scale = max(abs(a), abs(n), floor)
    if scale == 0.0:
        return 0.0
    return abs(a - n) / scale


def fd_noise_floor(f0: float, step: float) -> float:
    """Round-off level of a central difference of a function of size ``f0``."""
    return 1e3 * np.finfo(float).eps * max(1.0, abs(f0)) / step


def grad_check(hf: Heightfield, views: list[ViewSpec], spec: HeavisideKind,
               cfg: LossConfig = LossConfig(), n_probes: int = 100, fd_step: float = 1e-4,
               seed: int = 0, tiling: int = 1) -> GradCheckReport:
    """Compare analytic gradients with central differences at random coordinates.

    Height steps are ``fd_step * (h_max - h_min)``, color steps ``fd_step``.
    Coordinates are probed in pairs of one height and one color channel.
    """
    if n_probes < 1:
        raise ValueError("n_probes must be >= 1")
    terms, grads = backward(hf, views, spec, cfg, tiling)
    rng = np.random.default_rng(seed)
    report = GradCheckReport()
    for p in range(n_probes):
        probe = hf.copy()
        if p % 2 == 0:
            i, j = int(rng.integers(hf.rows)), int(rng.integers(hf.cols))
            step = fd_step * hf.height_range
            base = hf.heights[i, j]
            probe.heights[i, j] = base + step
            f_plus = total_loss(probe, views, spec, cfg, tiling).total
            probe.heights[i, j] = base - step
            f_minus = total_loss(probe, views, spec, cfg, tiling).total
            name, index, analytic = "height", (i, j), float(grads.d_heights[i, j])
        else:
            i, j, ch = int(rng.integers(hf.rows)), int(rng.integers(hf.cols)), int(rng.integers(3))
            step = fd_step
            base = hf.colors[i, j, ch]
            probe.colors[i, j, ch] = base + step
            f_plus = total_loss(probe, views, spec, cfg, tiling).total
            probe.colors[i, j, ch] = base - step
            f_minus = total_loss(probe, views, spec, cfg, tiling).total
            name, index, analytic = "color", (i, j, ch), float(grads.d_colors[i, j, ch])
        numeric = (f_plus - f_minus) / (2 * step)
        err = relative_error(analytic, numeric, fd_noise_floor(terms.total, step))
        report.rows.append((name, index, analytic, numeric, err))
        if err > FLAG_ERROR:
            report.flagged.append((name, index))
    errs = np.array([r[4] for r in report.rows])
    report.max_rel_error = float(errs.max())
    report.mean_rel_error = float(errs.mean())
    worst = report.rows[int(errs.argmax())]
    report.worst = (worst[0], worst[1])
    return report
