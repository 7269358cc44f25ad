"""Design loop: Adam, coarse-to-fine subdivision, alternating blocks, annealing.

Schedule (global step ``t``, counted from 0):

* annealing runs before step 0 and before every ``every_n_steps``-th step;
* bars are subdivided before every ``subdivide_every``-th step until the end
  resolution, and any subdivision due exactly at the last step is applied to
  the returned field (it does not change the rendered images);
* blocks alternate ``height_steps`` height updates then ``color_steps`` color
  updates; with alternation off both blocks update every step.

The surrogate sharpness ``k`` moves linearly from ``k_start`` to ``k_end``.
Because smooth losses at different ``k`` are not comparable, the best field is
chosen by the exact-render objective, which is also what is reported as the
final MSE.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from .gradients import GradientSet, backward
from .heaviside import HeavisideKind
from .model import Heightfield, ViewSpec
from .objective import LossConfig, LossTerms, total_loss
from .render import hit_bands

logger = logging.getLogger(__name__)

__all__ = [
    "AdamConfig",
    "CoarseToFineConfig",
    "BCDConfig",
    "AnnealConfig",
    "FieldConfig",
    "OptimizerConfig",
    "OptimizerState",
    "OptimizeResult",
    "INIT_KINDS",
    "initial_field",
    "adam_step",
    "subdivide",
    "anneal",
    "cooling_steps",
    "metropolis_accept",
    "optimize",
    "project_colors",
]

INIT_KINDS = ("flat", "vertical_wall", "horizontal_wall", "cross", "random")


@dataclass(frozen=True)
class AdamConfig:
    lr_heights: float = 0.05  # fraction of (h_max - h_min) per step
    lr_colors: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


@dataclass(frozen=True)
class CoarseToFineConfig:
    enabled: bool = True
    start_resolution: int = 8
    end_resolution: int = 32
    subdivide_every: int = 50


@dataclass(frozen=True)
class BCDConfig:
    enabled: bool = True
    height_steps: int = 10
    color_steps: int = 20


@dataclass(frozen=True)
class AnnealConfig:
    enabled: bool = True
    T_max: float = 3.0
    T_min: float = 0.5
    cool_factor: float = 0.99
    every_n_steps: int = 100
    neighbor_sigma: float = 0.1
    energy_scale: float = 1.0  # annealing energy = energy_scale * total loss


@dataclass(frozen=True)
class FieldConfig:
    """Physical geometry; ``strip_width_mm`` is the bar width at the end resolution."""

    strip_width_mm: float = 0.085
    h_min: float = 0.0
    h_max: float | None = None  # default: 16 end-resolution strip widths

    @property
    def resolved_h_max(self) -> float:
        return self.h_max if self.h_max is not None else 16 * self.strip_width_mm


@dataclass(frozen=True)
class OptimizerConfig:
    total_steps: int = 100
    adam: AdamConfig = AdamConfig()
    coarse_to_fine: CoarseToFineConfig = CoarseToFineConfig()
    bcd: BCDConfig = BCDConfig()
    annealing: AnnealConfig = AnnealConfig()
    geometry: FieldConfig = FieldConfig()
    init_kind: str = "flat"
    heaviside: HeavisideKind = HeavisideKind("tanh", 10.0)
    k_end: float | None = 100.0  # None keeps k fixed
    loss: LossConfig = LossConfig()
    tiling: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        errors = self.validate()
        if errors:
            raise ValueError("; ".join(errors))

    def validate(self) -> list[str]:
        errs = []
        c2f = self.coarse_to_fine
        for name, r in (("start_resolution", c2f.start_resolution), ("end_resolution", c2f.end_resolution)):
            if r < 1 or r & (r - 1):
                errs.append(f"coarse_to_fine.{name} must be a power of two, got {r}")
        if c2f.start_resolution > c2f.end_resolution:
            errs.append("coarse_to_fine.start_resolution must not exceed end_resolution")
        if c2f.subdivide_every < 1:
            errs.append("coarse_to_fine.subdivide_every must be >= 1")
        if self.bcd.height_steps < 1 or self.bcd.color_steps < 1:
            errs.append("bcd step counts must be >= 1")
        a = self.annealing
        if not a.T_max > a.T_min > 0:
            errs.append("annealing needs T_max > T_min > 0")
        if not 0 < a.cool_factor < 1:
            errs.append("annealing.cool_factor must lie in (0, 1)")
        if a.every_n_steps < 1:
            errs.append("annealing.every_n_steps must be >= 1")
        if self.init_kind not in INIT_KINDS:
            errs.append(f"init_kind must be one of {INIT_KINDS}, got {self.init_kind!r}")
        if self.total_steps < 0:
            errs.append("total_steps must be >= 0")
        g = self.geometry
        if not g.strip_width_mm > 0:
            errs.append("geometry.strip_width_mm must be positive")
        if not 0 <= g.h_min < g.resolved_h_max:
            errs.append("geometry needs 0 <= h_min < h_max")
        if self.tiling < 1:
            errs.append("tiling must be >= 1")
        return errs

    @property
    def start_resolution(self) -> int:
        c2f = self.coarse_to_fine
        return c2f.start_resolution if c2f.enabled else c2f.end_resolution

    def k_at(self, step: int) -> float:
        k0 = self.heaviside.k
        if self.k_end is None or self.total_steps <= 1:
            return k0
        frac = min(step / (self.total_steps - 1), 1.0)
        return k0 + (self.k_end - k0) * frac

    def replace(self, **kw) -> OptimizerConfig:
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class OptimizerState:
    field: Heightfield
    m_heights: np.ndarray
    v_heights: np.ndarray
    m_colors: np.ndarray
    v_colors: np.ndarray
    t_heights: int = 0
    t_colors: int = 0
    step: int = 0
    phase: str = "heights"
    temperature: float = 0.0
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    history: list = field(default_factory=list)
    best_field: Heightfield | None = None
    best_loss: float = math.inf
    best_step: int = -1
    interrupted: bool = False

    @classmethod
    def fresh(cls, hf: Heightfield, seed: int = 0) -> OptimizerState:
        z = np.zeros_like(hf.heights)
        zc = np.zeros_like(hf.colors)
        return cls(hf, z, z.copy(), zc, zc.copy(), rng=np.random.default_rng(seed))

    @property
    def resolution(self) -> int:
        return self.field.rows


@dataclass
class OptimizeResult:
    field: Heightfield
    history: list
    final: LossTerms          # exact-render objective of the returned field
    state: OptimizerState

    @property
    def final_mse(self) -> float:
        return self.final.mse


def initial_field(kind: str, resolution: int, seed: int = 0, geometry: FieldConfig = FieldConfig(),
                  end_resolution: int | None = None) -> Heightfield:
    """Starting heightfield; the footprint is fixed by the end-resolution strip width."""
    if kind not in INIT_KINDS:
        raise ValueError(f"unknown initial configuration {kind!r}; expected one of {INIT_KINDS}")
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    n = resolution
    end = end_resolution or n
    w = geometry.strip_width_mm * end / n
    lo, hi = geometry.h_min, geometry.resolved_h_max
    half = 0.5 * (hi - lo)
    colors = np.full((n, n, 3), 0.5)
    odd = (np.arange(n) % 2 == 1).astype(float)
    if kind == "flat":
        heights = np.full((n, n), lo)
    elif kind == "vertical_wall":
        heights = lo + half * np.broadcast_to(odd[None, :], (n, n))
    elif kind == "horizontal_wall":
        heights = lo + half * np.broadcast_to(odd[:, None], (n, n))
    elif kind == "cross":
        heights = lo + half * (odd[None, :] + odd[:, None])
    else:
        rng = np.random.default_rng(seed)
        heights = rng.uniform(lo, hi, (n, n))
        colors = rng.uniform(0.0, 1.0, (n, n, 3))
    return Heightfield(np.array(heights, dtype=float), colors, w, lo, hi)


def _height_margin(hf: Heightfield) -> float:
    return 1e-4 * hf.height_range


def project_feasible(hf: Heightfield) -> Heightfield:
    """Clamp heights strictly inside the bounds and colors into [0, 1]."""
    d = _height_margin(hf)
    out = hf.copy()
    out.heights = np.clip(out.heights, hf.h_min + d, hf.h_max - d)
    out.colors = np.clip(out.colors, 0.0, 1.0)
    return out


def adam_step(state: OptimizerState, grads: GradientSet, which: str, cfg: AdamConfig = AdamConfig()) -> OptimizerState:
    """One bias-corrected Adam update of one parameter block, then clamp."""
    if which not in ("heights", "colors"):
        raise ValueError(f"unknown parameter block {which!r}")
    hf = state.field
    if which == "heights":
        g, m, v = grads.d_heights, state.m_heights, state.v_heights
        lr = cfg.lr_heights * hf.height_range
        state.t_heights += 1
        t = state.t_heights
    else:
        g, m, v = grads.d_colors, state.m_colors, state.v_colors
        lr = cfg.lr_colors
        state.t_colors += 1
        t = state.t_colors
    if g.shape != m.shape:
        raise ValueError(f"gradient shape {g.shape} does not match parameters {m.shape}")
    if not np.all(np.isfinite(g)):
        raise FloatingPointError(f"non-finite {which} gradient")
    m *= cfg.beta1
    m += (1.0 - cfg.beta1) * g
    v *= cfg.beta2
    v += (1.0 - cfg.beta2) * (g * g)
    m_hat = m / (1.0 - cfg.beta1 ** t)
    v_hat = v / (1.0 - cfg.beta2 ** t)
    update = lr * m_hat / (np.sqrt(v_hat) + cfg.epsilon)
    if which == "heights":
        d = _height_margin(hf)
        hf.heights = np.clip(hf.heights - update, hf.h_min + d, hf.h_max - d)
    else:
        hf.colors = np.clip(hf.colors - update, 0.0, 1.0)
    return state


def _replicate(a: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(a, 2, axis=0), 2, axis=1)


def subdivide_field(hf: Heightfield) -> Heightfield:
    return Heightfield(_replicate(hf.heights), _replicate(hf.colors), hf.strip_width / 2, hf.h_min, hf.h_max)


def subdivide(state: OptimizerState, end_resolution: int | None = None) -> OptimizerState:
    """Split every bar into a 2x2 block with the same height, color and Adam moments."""
    if end_resolution is not None and state.resolution >= end_resolution:
        raise ValueError(f"already at end resolution {end_resolution}")
    state.field = subdivide_field(state.field)
    state.m_heights = _replicate(state.m_heights)
    state.v_heights = _replicate(state.v_heights)
    state.m_colors = _replicate(state.m_colors)
    state.v_colors = _replicate(state.v_colors)
    return state


def cooling_steps(cfg: AnnealConfig) -> int:
    """Number of proposals one annealing pass makes."""
    n, T = 0, cfg.T_max
    while T > cfg.T_min:
        T *= cfg.cool_factor
        n += 1
    return n


def metropolis_accept(delta: float, T: float, u: float) -> bool:
    """Accept improvements; accept a worse candidate when ``u < exp(-delta/T)``."""
    if delta < 0:
        return True
    return u < math.exp(-delta / T)


def random_neighbour(hf: Heightfield, T: float, cfg: AnnealConfig, rng: np.random.Generator) -> Heightfield:
    scale = cfg.neighbor_sigma * T / cfg.T_max
    cand = hf.copy()
    d = _height_margin(hf)
    cand.heights = np.clip(hf.heights + rng.normal(0.0, scale * hf.height_range, hf.heights.shape),
                           hf.h_min + d, hf.h_max - d)
    cand.colors = np.clip(hf.colors + rng.normal(0.0, scale, hf.colors.shape), 0.0, 1.0)
    return cand


def anneal(state: OptimizerState, cfg: OptimizerConfig, views: list[ViewSpec],
           loss_fn: Callable[[Heightfield], float] | None = None) -> OptimizerState:
    """Simulated annealing on heights and colors with exponential cooling."""
    a = cfg.annealing
    if not a.enabled:
        raise ValueError("annealing is disabled in this configuration")
    if loss_fn is None:
        spec = cfg.heaviside.with_k(cfg.k_at(state.step))
        loss_fn = lambda hf: a.energy_scale * total_loss(hf, views, spec, cfg.loss, cfg.tiling,  # noqa: E731
                                                         stream=state.step).total
    rng = state.rng
    current = state.field
    current_loss = loss_fn(current)
    T = a.T_max
    accepted = 0
    while T > a.T_min:
        cand = random_neighbour(current, T, a, rng)
        cand_loss = loss_fn(cand)
        if metropolis_accept(cand_loss - current_loss, T, rng.random()):
            current, current_loss = cand, cand_loss
            accepted += 1
        T *= a.cool_factor
    state.field = current
    state.temperature = T
    logger.debug("annealing at step %d accepted %d proposals", state.step, accepted)
    return state


def _phase(step: int, cfg: OptimizerConfig) -> str:
    if not cfg.bcd.enabled:
        return "both"
    cycle = cfg.bcd.height_steps + cfg.bcd.color_steps
    return "heights" if step % cycle < cfg.bcd.height_steps else "colors"


def exact_objective(hf: Heightfield, views: list[ViewSpec], cfg: OptimizerConfig) -> LossTerms:
    return total_loss(hf, views, None, cfg.loss, cfg.tiling)


def _subdivisions_due(step: int, cfg: OptimizerConfig) -> int:
    """Subdivisions that should have happened before ``step``."""
    c2f = cfg.coarse_to_fine
    if not c2f.enabled:
        return 0
    max_subs = int(round(math.log2(c2f.end_resolution // c2f.start_resolution)))
    return min(step // c2f.subdivide_every, max_subs)


def _n_subdivisions(state: OptimizerState, cfg: OptimizerConfig) -> int:
    return int(round(math.log2(state.resolution // cfg.start_resolution)))


def _check_views(views: list[ViewSpec]) -> None:
    if not views:
        raise ValueError("need at least one view")
    sizes = {v.image_size for v in views}
    if len(sizes) != 1:
        raise ValueError(f"all views must share one image size, got {sorted(sizes)}")
    for v in views:
        if v.desired is None:
            raise ValueError("every view needs a desired image")


def new_state(cfg: OptimizerConfig) -> OptimizerState:
    c2f = cfg.coarse_to_fine
    hf = initial_field(cfg.init_kind, cfg.start_resolution, cfg.seed, cfg.geometry, c2f.end_resolution)
    return OptimizerState.fresh(project_feasible(hf), cfg.seed)


def optimize(views: list[ViewSpec], cfg: OptimizerConfig = OptimizerConfig(),
             state: OptimizerState | None = None,
             callback: Callable[[OptimizerState, dict], None] | None = None) -> OptimizeResult:
    """Run the full design loop; pass ``state`` to resume an interrupted run.

    A ``KeyboardInterrupt`` stops the loop cleanly with ``state.interrupted``
    set, so the caller can write a resumable checkpoint.
    """
    _check_views(views)
    if state is None:
        state = new_state(cfg)
    state.interrupted = False
    try:
        while state.step < cfg.total_steps:
            t = state.step
            while _n_subdivisions(state, cfg) < _subdivisions_due(t, cfg):
                subdivide(state)
                logger.info("step %d: subdivided to %dx%d", t, state.resolution, state.resolution)
            if cfg.annealing.enabled and t % cfg.annealing.every_n_steps == 0:
                anneal(state, cfg, views)
            phase = _phase(t, cfg)
            state.phase = phase
            spec = cfg.heaviside.with_k(cfg.k_at(t))
            terms, grads = backward(state.field, views, spec, cfg.loss, cfg.tiling, stream=t)
            exact = exact_objective(state.field, views, cfg)
            if exact.total < state.best_loss:
                state.best_loss, state.best_step = exact.total, t
                state.best_field = state.field.copy()
            record = {"step": t, "mse": terms.mse, "barrier": terms.barrier, "neighbor": terms.neighbor,
                      "total": terms.total, "phase": phase, "k": spec.k, "resolution": state.resolution,
                      "exact_mse": exact.mse, "exact_total": exact.total, "best_total": state.best_loss}
            state.history.append(record)
            if phase in ("heights", "both"):
                adam_step(state, grads, "heights", cfg.adam)
            if phase in ("colors", "both"):
                adam_step(state, grads, "colors", cfg.adam)
            state.step += 1
            if callback is not None:
                callback(state, record)
    except KeyboardInterrupt:
        state.interrupted = True
        logger.warning("interrupted at step %d", state.step)

    if not state.interrupted:
        while _n_subdivisions(state, cfg) < _subdivisions_due(state.step, cfg):
            subdivide(state)
        exact = exact_objective(state.field, views, cfg)
        if exact.total < state.best_loss:
            state.best_loss, state.best_step = exact.total, state.step
            state.best_field = state.field.copy()
    best = state.best_field if state.best_field is not None else state.field.copy()
    while best.rows < state.resolution:
        best = subdivide_field(best)
    final = exact_objective(best, views, cfg)
    return OptimizeResult(best, state.history, final, state)


def project_colors(hf: Heightfield, views: list[ViewSpec], segments_per_bar: int = 1,
                   tiling: int = 1) -> np.ndarray:
    """Paint desired pixel colors onto the bar surfaces their rays hit.

    Returns per-bar color bands of shape ``(rows, cols, segments_per_bar, 3)``.
    Contributions from all views are averaged by hit count; bands no ray hits
    keep the bar's own color.
    """
    if segments_per_bar < 1:
        raise ValueError("segments_per_bar must be >= 1")
    n_cells = hf.rows * hf.cols
    S = segments_per_bar
    sums = np.zeros((n_cells * S, 3))
    counts = np.zeros(n_cells * S)
    for view in views:
        cells, band, pixel = hit_bands(hf, view, S, tiling)
        hit = cells >= 0
        slot = cells[hit] * S + band[hit]
        colors = view.desired.reshape(-1, 3)[pixel[hit]]
        counts += np.bincount(slot, minlength=n_cells * S)
        for ch in range(3):
            sums[:, ch] += np.bincount(slot, weights=colors[:, ch], minlength=n_cells * S)
    base = np.repeat(hf.colors.reshape(-1, 1, 3), S, axis=1).reshape(-1, 3)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(counts[:, None] > 0, sums / np.maximum(counts, 1)[:, None], base)
    return out.reshape(hf.rows, hf.cols, S, 3)
