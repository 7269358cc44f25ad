"""Optimization objective: image MSE plus height regularizers."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .heaviside import HeavisideKind
from .model import Heightfield, ViewSpec
from .render import render_hard, render_view

__all__ = [
    "LossConfig",
    "LossTerms",
    "REGULARIZATION_VARIANTS",
    "mse_loss",
    "barrier_loss",
    "barrier_grad",
    "neighbor_loss",
    "neighbor_grad",
    "total_loss",
]

ABS_EPS = 1e-6
REGULARIZATION_VARIANTS = ("none", "barrier", "smoothing", "barrier+smoothing")


@dataclass(frozen=True)
class LossConfig:
    barrier_weight: float = 1e-6
    neighbor_weight: float = 1e-5
    use_barrier: bool = True
    use_neighbor: bool = True
    background_policy: str = "mask"  # or "penalize"

    def __post_init__(self) -> None:
        if self.barrier_weight < 0 or self.neighbor_weight < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.background_policy not in ("mask", "penalize"):
            raise ValueError(f"unknown background policy {self.background_policy!r}")

    @classmethod
    def variant(cls, name: str, **kw) -> LossConfig:
        """One of the regularization ablation columns."""
        if name not in REGULARIZATION_VARIANTS:
            raise ValueError(f"unknown variant {name!r}")
        return cls(use_barrier="barrier" in name, use_neighbor="smoothing" in name, **kw)

    @property
    def effective_barrier(self) -> float:
        return self.barrier_weight if self.use_barrier else 0.0

    @property
    def effective_neighbor(self) -> float:
        return self.neighbor_weight if self.use_neighbor else 0.0


class LossTerms(NamedTuple):
    mse: float
    barrier: float
    neighbor: float
    total: float


def mse_loss(rendered, desired, miss_masks=None) -> float:
    """Mean squared error over views, pixels and channels.

    Miss pixels (where a mask is true) contribute nothing; normalization stays
    ``1 / (m^2 * n_views)`` with the channel mean taken per pixel.
    """
    rendered, desired = list(rendered), list(desired)
    if len(rendered) != len(desired) or not rendered:
        raise ValueError("need matching, non-empty image lists")
    total = 0.0
    for v, (img, ref) in enumerate(zip(rendered, desired)):
        img, ref = np.asarray(img, dtype=float), np.asarray(ref, dtype=float)
        if img.shape != ref.shape or img.ndim != 3 or img.shape[0] != img.shape[1]:
            raise ValueError(f"view {v}: shape mismatch {img.shape} vs {ref.shape}")
        per_pixel = ((img - ref) ** 2).mean(axis=2)
        if miss_masks is not None and miss_masks[v] is not None:
            per_pixel = np.where(miss_masks[v], 0.0, per_pixel)
        total += per_pixel.sum() / per_pixel.size
    return float(total / len(rendered))


def _normalized(hf: Heightfield) -> np.ndarray:
    return (hf.heights - hf.h_min) / hf.height_range


def barrier_loss(hf: Heightfield) -> float:
    """Log barrier on heights normalized to ``(0, 1)``; ``inf`` at or past a bound."""
    u = _normalized(hf)
    if np.any(u <= 0) or np.any(u >= 1):
        return math.inf
    return float(-(np.log1p(-u) + np.log(u)).sum())


def barrier_grad(hf: Heightfield) -> np.ndarray:
    u = _normalized(hf)
    return (1.0 / (1.0 - u) - 1.0 / u) / hf.height_range


def _smooth_abs(d):
    return np.sqrt(d * d + ABS_EPS * ABS_EPS) - ABS_EPS


def neighbor_loss(hf: Heightfield) -> float:
    """Sum of (smoothed) absolute normalized height jumps over 4-neighbor pairs."""
    u = _normalized(hf)
    return float(_smooth_abs(np.diff(u, axis=0)).sum() + _smooth_abs(np.diff(u, axis=1)).sum())


def neighbor_grad(hf: Heightfield) -> np.ndarray:
    u = _normalized(hf)
    g = np.zeros_like(u)
    for axis in (0, 1):
        d = np.diff(u, axis=axis)
        s = d / np.sqrt(d * d + ABS_EPS * ABS_EPS)
        lo = [slice(None)] * 2
        hi = [slice(None)] * 2
        lo[axis], hi[axis] = slice(1, None), slice(None, -1)
        g[tuple(lo)] += s
        g[tuple(hi)] -= s
    return g / hf.height_range


def regularizers(hf: Heightfield, cfg: LossConfig) -> tuple[float, float]:
    barrier = barrier_loss(hf) if cfg.effective_barrier > 0 else 0.0
    neighbor = neighbor_loss(hf) if cfg.effective_neighbor > 0 else 0.0
    return barrier, neighbor


def combine(mse: float, barrier: float, neighbor: float, cfg: LossConfig) -> LossTerms:
    total = mse
    if cfg.effective_barrier > 0:
        total = total + cfg.effective_barrier * barrier
    if cfg.effective_neighbor > 0:
        total = total + cfg.effective_neighbor * neighbor
    return LossTerms(float(mse), float(barrier), float(neighbor), float(total))


def total_loss(hf: Heightfield, views: list[ViewSpec], spec: HeavisideKind | None,
               cfg: LossConfig = LossConfig(), tiling: int = 1, stream: int = 0) -> LossTerms:
    """Objective value with the differentiable renderer (``spec=None``: exact step)."""
    rendered, masks = [], []
    for v, view in enumerate(views):
        if spec is None:
            out = render_hard(hf, view, tiling)
        else:
            out = render_view(hf, view, spec, tiling, view_index=v, stream=stream)
        rendered.append(out.image)
        masks.append(out.miss_mask if cfg.background_policy == "mask" else None)
    mse = mse_loss(rendered, [view.desired for view in views], masks)
    return combine(mse, *regularizers(hf, cfg), cfg)
