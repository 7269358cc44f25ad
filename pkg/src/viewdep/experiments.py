"""Experiment harness: target images, angle sweeps and ablation tables.

Every cell is a short two-view run (100 steps by default) of
:func:`viewdep.optimize.optimize`.  Cells are independent, so they can be
spread over worker processes; results are sorted back into grid order.
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from .heaviside import KINDS, HeavisideKind
from .model import ViewSpec
from .objective import REGULARIZATION_VARIANTS, LossConfig
from .optimize import AnnealConfig, BCDConfig, CoarseToFineConfig, OptimizerConfig, optimize

logger = logging.getLogger(__name__)

__all__ = [
    "TARGET_KINDS",
    "make_target",
    "make_targets",
    "parse_range",
    "sweep",
    "ablate",
    "SUITES",
    "ABLATION_PAIRS",
    "OPTIMIZATION_COLUMNS",
]

TARGET_KINDS = ("black", "white", "random", "stripes")
ABLATION_PAIRS = (("black", "white"), ("random", "random"), ("black", "random"),
                  ("black", "stripes"), ("random", "stripes"))
OPTIMIZATION_COLUMNS = ("none", "coarse_to_fine", "coord_descent", "full")
SUITES = ("regularization", "optimization", "heaviside")
ABLATION_VIEWS = ((45.0, 0.0), (45.0, 180.0))
ABLATION_K = 0.1


def make_target(kind: str, size: int = 32, seed: int = 0) -> np.ndarray:
    """Linear-RGB target image.

    ``random`` is seeded uniform RGB noise; ``stripes`` alternates black and
    white columns with a period of four pixels.
    """
    if kind == "black":
        return np.zeros((size, size, 3))
    if kind == "white":
        return np.ones((size, size, 3))
    if kind == "random":
        return np.random.default_rng(seed).uniform(0.0, 1.0, (size, size, 3))
    if kind == "stripes":
        cols = ((np.arange(size) // 2) % 2).astype(float)
        return np.broadcast_to(cols[None, :, None], (size, size, 3)).copy()
    raise ValueError(f"unknown target {kind!r}; expected one of {TARGET_KINDS}")


def make_targets(size: int = 32, seed: int = 0) -> dict:
    return {k: make_target(k, size, seed) for k in TARGET_KINDS}


def parse_range(text: str) -> list[float]:
    """``"a:b:step"`` -> inclusive grid ``a, a+step, ... <= b``."""
    try:
        a, b, s = (float(p) for p in text.split(":"))
    except ValueError:
        raise ValueError(f"range must look like start:stop:step, got {text!r}") from None
    if s <= 0 or b < a:
        raise ValueError(f"empty range {text!r}")
    n = int(np.floor((b - a) / s + 1e-9)) + 1
    return [round(a + i * s, 10) for i in range(n)]


def _run_cell(args):
    """Worker entry point: (cell key, views as tuples, config) -> result row."""
    key, view_data, cfg = args
    views = [ViewSpec(el, az, img.shape[0], img) for el, az, img in view_data]
    t0 = time.perf_counter()
    res = optimize(views, cfg)
    row = dict(key)
    row.update(final_mse=res.final.mse, final_total=res.final.total, seconds=time.perf_counter() - t0)
    curve = [rec["exact_mse"] for rec in res.history]
    return row, curve


def _map(cells, workers: int):
    if workers <= 1:
        return [_run_cell(c) for c in cells]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_cell, cells))


def sweep_views(axis: str, separation: float, elevation: float | None = None):
    """The two views of one sweep point.

    ``azimuth``: both at ``elevation`` (default 60), azimuths 0 and the separation.
    ``elevation``: azimuth 0, elevations ``elevation`` (default 20) and that plus the separation.
    """
    if axis == "azimuth":
        el = 60.0 if elevation is None else elevation
        return (el, 0.0), (el, float(separation) % 360.0)
    if axis == "elevation":
        el = 20.0 if elevation is None else elevation
        if not 0 < el + separation <= 90:
            raise ValueError(f"elevation {el} + {separation} leaves (0, 90]")
        return (el, 0.0), (el + separation, 0.0)
    raise ValueError(f"axis must be azimuth or elevation, got {axis!r}")


def sweep(axis: str, separations, cfg: OptimizerConfig = OptimizerConfig(), image_size: int = 32,
          seeds=(0,), elevation: float | None = None, workers: int = 1):
    """Black-versus-white two-view runs over a grid of angle separations.

    Returns ``(rows, curves)``: one row per (separation, seed) and the
    per-step exact MSE of each run.
    """
    separations = list(separations)
    if not separations:
        raise ValueError("empty sweep grid")
    black, white = make_target("black", image_size), make_target("white", image_size)
    cells = []
    for sep in separations:
        (el1, az1), (el2, az2) = sweep_views(axis, sep, elevation)
        for seed in seeds:
            key = {"axis": axis, "separation": sep, "seed": seed, "elevation_1": el1, "azimuth_1": az1,
                   "elevation_2": el2, "azimuth_2": az2}
            cells.append((key, [(el1, az1, black), (el2, az2, white)], cfg.replace(seed=seed)))
    out = _map(cells, workers)
    return [r for r, _ in out], [c for _, c in out]


def optimization_variant(cfg: OptimizerConfig, column: str) -> OptimizerConfig:
    """Toggle the optimization techniques for one column of the optimization suite."""
    c2f = column in ("coarse_to_fine", "full")
    bcd = column in ("coord_descent", "full")
    anneal = column == "full"
    if column not in OPTIMIZATION_COLUMNS:
        raise ValueError(f"unknown column {column!r}")
    return cfg.replace(coarse_to_fine=replace(cfg.coarse_to_fine, enabled=c2f),
                       bcd=replace(cfg.bcd, enabled=bcd),
                       annealing=replace(cfg.annealing, enabled=anneal))


def suite_columns(suite: str) -> tuple:
    if suite == "optimization":
        return OPTIMIZATION_COLUMNS
    if suite == "regularization":
        return REGULARIZATION_VARIANTS
    if suite == "heaviside":
        return KINDS
    raise ValueError(f"unknown suite {suite!r}; expected one of {SUITES}")


def column_config(suite: str, column: str, cfg: OptimizerConfig) -> OptimizerConfig:
    if suite == "optimization":
        return optimization_variant(cfg, column)
    if suite == "regularization":
        loss = cfg.loss
        return cfg.replace(loss=LossConfig.variant(column, barrier_weight=loss.barrier_weight,
                                                   neighbor_weight=loss.neighbor_weight,
                                                   background_policy=loss.background_policy))
    if suite == "heaviside":
        # fixed sharpness for every kind so the curves are comparable
        return cfg.replace(heaviside=HeavisideKind(column, ABLATION_K, cfg.heaviside.seed), k_end=None)
    raise ValueError(f"unknown suite {suite!r}; expected one of {SUITES}")


def ablate(suite: str, cfg: OptimizerConfig = OptimizerConfig(), pairs=ABLATION_PAIRS, image_size: int = 32,
           seeds=(0,), workers: int = 1, views=ABLATION_VIEWS):
    """One table of final losses: a row per target pair, a column per variant.

    Returns ``(rows, curves)`` like :func:`sweep`.
    """
    columns = suite_columns(suite)
    cells = []
    for p, (t1, t2) in enumerate(pairs):
        # two "random" targets in one pair are distinct images
        img1 = make_target(t1, image_size, seed=1000 + 2 * p)
        img2 = make_target(t2, image_size, seed=1001 + 2 * p)
        for column in columns:
            ccfg = column_config(suite, column, cfg)
            for seed in seeds:
                key = {"suite": suite, "target_1": t1, "target_2": t2, "column": column, "seed": seed}
                cells.append((key, [(views[0][0], views[0][1], img1), (views[1][0], views[1][1], img2)],
                              ccfg.replace(seed=seed)))
    out = _map(cells, workers)
    return [r for r, _ in out], [c for _, c in out]


def median_by(rows, keys, value="final_mse") -> dict:
    """Median of ``value`` over seeds, grouped by the given row keys."""
    groups = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in keys), []).append(r[value])
    return {k: float(np.median(v)) for k, v in groups.items()}
