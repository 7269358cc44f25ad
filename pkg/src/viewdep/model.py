"""Heightfield and camera data model, plus the reduction of 3D rays to 2D slices.

Coordinates: the field footprint spans ``x in [0, cols*w]`` and
``y in [0, rows*w]``; bar ``(i, j)`` occupies ``[j*w, (j+1)*w] x [i*w, (i+1)*w]``
and rises from ``z = 0`` to ``heights[i, j]``.  Image pixel ``(r, c)`` of an
``m x m`` view is the ground point ``((c + 1/2) X / m, (r + 1/2) Y / m)``; its
ray is the line that arrives at that ground point travelling along the view
direction.  Images therefore share the array layout of the field.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

__all__ = [
    "Heightfield",
    "ViewSpec",
    "Ray2D",
    "SliceLine",
    "SliceCrossSection",
    "CameraRay",
    "GeometryError",
    "direction_from_angles",
    "make_camera_rays",
    "slice_heightfield",
    "backtrace_boundaries",
    "monotonic_cummax",
]


class GeometryError(ValueError):
    """Invalid geometric input (angles, slopes, shapes)."""


@dataclass
class Heightfield:
    """Grid of square-footprint bars with per-bar height (mm) and RGB color."""

    heights: np.ndarray
    colors: np.ndarray
    strip_width: float
    h_min: float
    h_max: float

    def __post_init__(self) -> None:
        self.heights = np.array(self.heights, dtype=float)
        self.colors = np.array(self.colors, dtype=float)
        if self.heights.ndim != 2 or self.heights.shape[0] < 1 or self.heights.shape[1] < 1:
            raise GeometryError(f"heights must be a non-empty 2D array, got shape {self.heights.shape}")
        if self.colors.shape != self.heights.shape + (3,):
            raise GeometryError(f"colors shape {self.colors.shape} does not match heights {self.heights.shape}")
        if not self.strip_width > 0:
            raise GeometryError("strip_width must be positive")
        if not 0 <= self.h_min < self.h_max:
            raise GeometryError(f"need 0 <= h_min < h_max, got {self.h_min}, {self.h_max}")
        self.strip_width = float(self.strip_width)
        self.h_min = float(self.h_min)
        self.h_max = float(self.h_max)
        if np.any(self.heights < self.h_min) or np.any(self.heights > self.h_max):
            raise GeometryError("heights outside [h_min, h_max]")
        if np.any(self.colors < 0) or np.any(self.colors > 1):
            raise GeometryError("colors outside [0, 1]")

    @property
    def rows(self) -> int:
        return self.heights.shape[0]

    @property
    def cols(self) -> int:
        return self.heights.shape[1]

    @property
    def height_range(self) -> float:
        return self.h_max - self.h_min

    @property
    def extent(self) -> tuple[float, float]:
        """Footprint size ``(X, Y)`` in millimeters."""
        return self.cols * self.strip_width, self.rows * self.strip_width

    def copy(self) -> Heightfield:
        return replace(self, heights=self.heights.copy(), colors=self.colors.copy())

    @classmethod
    def uniform(cls, rows: int, cols: int, height: float, color=(0.5, 0.5, 0.5),
                strip_width: float = 1.0, h_min: float = 0.0, h_max: float = 4.0) -> Heightfield:
        heights = np.full((rows, cols), float(height))
        colors = np.broadcast_to(np.asarray(color, dtype=float), (rows, cols, 3)).copy()
        return cls(heights, colors, strip_width, h_min, h_max)


@dataclass
class ViewSpec:
    """Orthographic view direction and its desired ``m x m`` RGB image."""

    elevation_deg: float
    azimuth_deg: float
    image_size: int
    desired: np.ndarray | None = None

    def __post_init__(self) -> None:
        _check_angles(self.elevation_deg, self.azimuth_deg)
        if int(self.image_size) < 1:
            raise GeometryError("image_size must be positive")
        self.image_size = int(self.image_size)
        if self.desired is not None:
            self.desired = np.asarray(self.desired, dtype=float)
            m = self.image_size
            if self.desired.shape != (m, m, 3):
                raise GeometryError(f"desired image shape {self.desired.shape} != {(m, m, 3)}")

    @property
    def direction(self) -> np.ndarray:
        return direction_from_angles(self.elevation_deg, self.azimuth_deg)

    @property
    def is_vertical(self) -> bool:
        return self.elevation_deg == 90.0

    @property
    def tan_elevation(self) -> float:
        return math.tan(math.radians(self.elevation_deg))


class Ray2D(NamedTuple):
    """A projected ray in a slice plane: ``z(s) = intercept + slope * s``."""

    slope: float
    intercept: float


class SliceLine(NamedTuple):
    """A projected ray line clipped to the footprint.

    ``entry`` is the point where the line enters the footprint, ``direction``
    the unit horizontal travel direction and ``length`` the clipped length.
    """

    entry: tuple[float, float]
    direction: tuple[float, float]
    length: float


class CameraRay(NamedTuple):
    line_id: int
    ray: Ray2D
    pixel: tuple[int, int]


@dataclass
class SliceCrossSection:
    """Strips crossed by one slice line, in ray travel order."""

    heights1d: np.ndarray
    cum_widths: np.ndarray
    colors1d: np.ndarray
    source_cells: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=int))

    @property
    def n(self) -> int:
        return len(self.heights1d)

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.cum_widths)


def _check_angles(elevation_deg: float, azimuth_deg: float) -> None:
    if not 0.0 < elevation_deg <= 90.0:
        raise GeometryError(f"elevation must lie in (0, 90], got {elevation_deg}")
    if not 0.0 <= azimuth_deg < 360.0:
        raise GeometryError(f"azimuth must lie in [0, 360), got {azimuth_deg}")


def direction_from_angles(elevation_deg: float, azimuth_deg: float) -> np.ndarray:
    """Unit vector pointing from the camera toward the surface."""
    _check_angles(elevation_deg, azimuth_deg)
    e = math.radians(elevation_deg)
    a = math.radians(azimuth_deg)
    if elevation_deg == 90.0:
        return np.array([0.0, 0.0, -1.0])
    return -np.array([math.cos(e) * math.cos(a), math.cos(e) * math.sin(a), math.sin(e)])


def travel_direction(azimuth_deg: float) -> tuple[float, float]:
    """Horizontal direction in which rays of this azimuth advance."""
    a = math.radians(azimuth_deg)
    ux, uy = -math.cos(a), -math.sin(a)
    # snap the cardinal directions so axis-aligned views stay exactly axis-aligned
    ux = 0.0 if abs(ux) < 1e-15 else ux
    uy = 0.0 if abs(uy) < 1e-15 else uy
    return ux, uy


def clip_line(point, direction, extent) -> tuple[float, float]:
    """Parameter interval ``[t_in, t_out]`` of ``point + t*direction`` inside the box."""
    t_lo, t_hi = -math.inf, math.inf
    for p, d, size in zip(point, direction, extent):
        if d == 0.0:
            if not 0.0 <= p <= size:
                return math.inf, -math.inf
            continue
        a, b = (0.0 - p) / d, (size - p) / d
        t_lo, t_hi = max(t_lo, min(a, b)), min(t_hi, max(a, b))
    return t_lo, t_hi


def make_camera_rays(view: ViewSpec, field_extent) -> list[CameraRay]:
    """One projected ray per pixel center, grouped by shared slice line.

    ``field_extent`` is ``(X, Y)`` in millimeters.  Line ids are assigned by
    sorting the lines' signed perpendicular offsets, so they depend only on
    the geometry.  Vertical views get one id per pixel and an infinite slope
    is avoided by reporting ``slope = -inf`` with the ray's ground height 0.
    """
    X, Y = map(float, field_extent)
    m = view.image_size
    cc, rr = np.meshgrid(np.arange(m), np.arange(m))
    qx = (cc.ravel() + 0.5) * X / m
    qy = (rr.ravel() + 0.5) * Y / m
    pixels = list(zip(rr.ravel().tolist(), cc.ravel().tolist()))
    if view.is_vertical:
        return [CameraRay(k, Ray2D(-math.inf, 0.0), px) for k, px in enumerate(pixels)]
    ux, uy = travel_direction(view.azimuth_deg)
    offsets = -uy * qx + ux * qy
    scale = max(X, Y)
    keys = np.round(offsets / scale, 9)
    _, line_ids = np.unique(keys, return_inverse=True)
    tan_e = view.tan_elevation
    rays = []
    for k, px in enumerate(pixels):
        t_in, _ = clip_line((qx[k], qy[k]), (ux, uy), (X, Y))
        rays.append(CameraRay(int(line_ids[k]), Ray2D(-tan_e, tan_e * (-t_in)), px))
    return rays


def pixel_line(view: ViewSpec, field_extent, pixel: tuple[int, int]) -> SliceLine:
    """The clipped slice line through one pixel's ground point."""
    X, Y = map(float, field_extent)
    m = view.image_size
    r, c = pixel
    q = ((c + 0.5) * X / m, (r + 0.5) * Y / m)
    u = travel_direction(view.azimuth_deg)
    t_in, t_out = clip_line(q, u, (X, Y))
    entry = (q[0] + t_in * u[0], q[1] + t_in * u[1])
    return SliceLine(entry, u, max(t_out - t_in, 0.0))


def slice_heightfield(hf: Heightfield, line: SliceLine) -> SliceCrossSection:
    """Cut the field along a clipped line (2D grid traversal).

    Strip widths are the segment lengths of the line inside each cell.
    A line that misses the footprint gives an empty cross-section.
    """
    w = hf.strip_width
    X, Y = hf.extent
    (ex, ey), (ux, uy), _ = line
    t_in, t_out = clip_line((ex, ey), (ux, uy), (X, Y))
    if not t_out > t_in:
        return SliceCrossSection(np.zeros(0), np.zeros(1), np.zeros((0, 3)), np.zeros((0, 2), dtype=int))
    ts = [t_in, t_out]
    for p, d, n in ((ex, ux, hf.cols), (ey, uy, hf.rows)):
        if d != 0.0:
            t = (np.arange(n + 1) * w - p) / d
            ts.extend(t[(t > t_in) & (t < t_out)].tolist())
    ts = np.unique(ts)
    widths = np.diff(ts)
    keep = widths > 1e-12 * w
    t0, t1 = ts[:-1][keep], ts[1:][keep]
    mid = 0.5 * (t0 + t1)
    j = np.clip(np.floor((ex + mid * ux) / w).astype(int), 0, hf.cols - 1)
    i = np.clip(np.floor((ey + mid * uy) / w).astype(int), 0, hf.rows - 1)
    cum = np.concatenate([[0.0], t1 - t_in])
    return SliceCrossSection(hf.heights[i, j].copy(), cum, hf.colors[i, j].copy(), np.stack([i, j], axis=1))


def backtrace_boundaries(slc: SliceCrossSection, ray_slope: float) -> np.ndarray:
    """Boundary intercepts ``y_0 .. y_n`` of a slice at slice coordinate 0.

    ``y_0`` passes through the foot of the first strip's near face (the ray
    enters the footprint above ground); ``y_{k+1}`` is the intercept of the
    ray-slope line through the far top corner of strip ``k``.  A ray with
    intercept ``o`` clears strip ``k`` exactly when ``o >= y_{k+1}``, so it
    hits strip ``k`` when ``max(y_0..y_k) <= o < max(y_0..y_{k+1})``.
    """
    if not (np.isfinite(ray_slope) and ray_slope < 0):
        raise GeometryError(f"backtrace needs a finite negative slope, got {ray_slope}")
    if slc.n == 0:
        return np.zeros(0)
    t = -ray_slope
    far = slc.heights1d + t * slc.cum_widths[1:]
    return np.concatenate([[t * slc.cum_widths[0]], far])


def monotonic_cummax(y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise ValueError("monotonic_cummax needs a non-empty sequence")
    return np.maximum.accumulate(y, axis=-1)
