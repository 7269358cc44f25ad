"""Design of colored heightfields whose appearance changes with the viewing angle.

A heightfield is a grid of square bars, each with a height and a color.  Seen
from an orthographic view, every pixel shows the first bar its ray hits.  The
renderer replaces that visibility test with a smooth step so the image error
can be differentiated with respect to every height and color, and the
optimizer fits the field to one desired image per view.
"""
from .gradients import GradCheckReport, GradientError, GradientSet, backward, grad_check
from .heaviside import KINDS, HeavisideKind, smooth_heaviside
from .model import GeometryError, Heightfield, ViewSpec
from .objective import LossConfig, LossTerms, total_loss
from .optimize import (AdamConfig, AnnealConfig, BCDConfig, CoarseToFineConfig, FieldConfig, OptimizerConfig,
                       OptimizerState, optimize, project_colors)
from .render import RenderOutput, render_hard, render_view

__version__ = "0.1.0"

__all__ = [
    "AdamConfig", "AnnealConfig", "BCDConfig", "CoarseToFineConfig", "FieldConfig", "GeometryError",
    "GradCheckReport", "GradientError", "GradientSet", "HeavisideKind", "Heightfield", "KINDS", "LossConfig",
    "LossTerms", "OptimizerConfig", "OptimizerState", "RenderOutput", "ViewSpec", "backward", "grad_check",
    "optimize", "project_colors", "render_hard", "render_view", "smooth_heaviside", "total_loss",
]
