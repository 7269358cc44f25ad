"""Smooth and stochastic surrogates for the unit step.

Every kind takes a dimensionless argument ``x`` and a sharpness ``k``; larger
``k`` is closer to the exact step.  The Bernoulli kinds sample ``{0, 1}`` with
the success probability of their deterministic sibling and report that
sibling's derivative for the backward pass.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erf

__all__ = ["HeavisideKind", "KINDS", "smooth_heaviside", "heaviside_prob", "heaviside_deriv", "step"]

KINDS = ("circle", "circle_distance", "erfc", "tanh", "log")
_BERNOULLI_BASE = {"circle_distance": "circle", "log": "tanh"}


@dataclass(frozen=True)
class HeavisideKind:
    kind: str = "tanh"
    k: float = 10.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown Heaviside kind {self.kind!r}; expected one of {KINDS}")
        if not self.k > 0:
            raise ValueError(f"k must be positive, got {self.k}")

    @property
    def stochastic(self) -> bool:
        return self.kind in _BERNOULLI_BASE

    @property
    def base(self) -> str:
        return _BERNOULLI_BASE.get(self.kind, self.kind)

    def with_k(self, k: float) -> HeavisideKind:
        return HeavisideKind(self.kind, k, self.seed)


def step(x):
    """Exact Heaviside with ``step(0) = 1``."""
    return (np.asarray(x) >= 0).astype(float)


def heaviside_prob(x, spec: HeavisideKind):
    """Deterministic value (or Bernoulli success probability) at ``x``."""
    kx = spec.k * np.asarray(x, dtype=float)
    base = spec.base
    if base == "tanh":
        return 0.5 + 0.5 * np.tanh(kx)
    if base == "erfc":
        return 0.5 + 0.5 * erf(kx)
    return 0.5 + 0.5 * kx / np.sqrt(kx * kx + 1.0)


def heaviside_deriv(x, spec: HeavisideKind):
    """d/dx of :func:`heaviside_prob`."""
    k = spec.k
    kx = k * np.asarray(x, dtype=float)
    base = spec.base
    if base == "tanh":
        t = np.tanh(kx)
        return 0.5 * k * (1.0 - t * t)
    if base == "erfc":
        return k / np.sqrt(np.pi) * np.exp(-kx * kx)
    return 0.5 * k / (kx * kx + 1.0) ** 1.5


def smooth_heaviside(x, spec: HeavisideKind, rng: np.random.Generator | None = None):
    """Evaluate the surrogate step; Bernoulli kinds draw from ``rng``.

    Without an explicit generator the Bernoulli kinds use ``spec.seed``.
    """
    p = heaviside_prob(x, spec)
    if not spec.stochastic:
        return p
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    return (rng.random(np.shape(p)) < p).astype(float)
