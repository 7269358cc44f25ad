"""Brute-force reference implementations used only by the tests.

Nothing here imports the renderer; they work straight from the 3D scene.
"""
from __future__ import annotations

import math

import numpy as np


def ground_points(rows, cols, w, m, tiling=1):
    unit = tiling // 2
    X, Y = cols * w, rows * w
    c, r = np.meshgrid(np.arange(m), np.arange(m))
    qx = (c + 0.5) * X / m + unit * X
    qy = (r + 0.5) * Y / m + unit * Y
    return qx.ravel(), qy.ravel()


def march_hits(heights, w, elevation, azimuth, m, delta=None, tiling=1):
    """First bar hit by each pixel ray, found by stepping along the 3D ray.

    Returns ``(cells, z)`` with ``cells`` the flat cell index (-1 for a miss)
    and ``z`` the height of the first sample found inside a bar.
    """
    heights = np.asarray(heights, dtype=float)
    rows, cols = heights.shape
    delta = w / 100 if delta is None else delta
    qx, qy = ground_points(rows, cols, w, m, tiling)
    n = qx.size
    cells = np.full(n, -1)
    zhit = np.full(n, np.nan)
    if elevation == 90:
        j = np.floor(qx / w).astype(int) % cols
        i = np.floor(qy / w).astype(int) % rows
        return i * cols + j, heights[i, j]
    e, a = math.radians(elevation), math.radians(azimuth)
    # horizontal unit vector pointing back toward the camera
    bx, by = math.cos(a), math.sin(a)
    slope = math.tan(e)
    top = heights.max() * 1.000001 + 1e-9
    dist = top / slope  # horizontal distance from q back to where the ray is above every bar
    n_steps = int(math.ceil(dist / delta)) + 1
    XT, YT = tiling * cols * w, tiling * rows * w
    active = np.ones(n, dtype=bool)
    for s in range(n_steps, -1, -1):
        t = s * delta
        px, py = qx + bx * t, qy + by * t
        pz = np.full(n, slope * t)
        inside = (px >= 0) & (px < XT) & (py >= 0) & (py < YT)
        j = np.clip(np.floor(px / w).astype(int), 0, tiling * cols - 1) % cols
        i = np.clip(np.floor(py / w).astype(int), 0, tiling * rows - 1) % rows
        solid = inside & (pz < heights[i, j]) & active
        cells[solid] = (i * cols + j)[solid]
        zhit[solid] = pz[solid]
        active &= ~solid
        if not active.any():
            break
    return cells, zhit


def brute_slice_lengths(rows, cols, w, entry, direction, length, n=10_000):
    """Per-cell clipped length of a line, by counting dense sample points."""
    t = (np.arange(n) + 0.5) / n * length
    px = entry[0] + direction[0] * t
    py = entry[1] + direction[1] * t
    j = np.clip(np.floor(px / w).astype(int), 0, cols - 1)
    i = np.clip(np.floor(py / w).astype(int), 0, rows - 1)
    out = {}
    for ii, jj in zip(i, j):
        out[(ii, jj)] = out.get((ii, jj), 0) + 1
    return {k: v * length / n for k, v in out.items()}


def line_bins(rows, cols, w, m, azimuth):
    """Group pixel ground points by the projected line through them (per-pair test)."""
    qx, qy = ground_points(rows, cols, w, m)
    a = math.radians(azimuth)
    d = np.array([math.cos(a), math.sin(a)])
    pts = np.stack([qx, qy], axis=1)
    labels = -np.ones(len(pts), dtype=int)
    n_lines = 0
    scale = max(rows, cols) * w
    for p in range(len(pts)):
        if labels[p] >= 0:
            continue
        diff = pts - pts[p]
        cross = np.abs(diff[:, 0] * d[1] - diff[:, 1] * d[0]) / scale
        members = (cross < 1e-9) & (labels < 0)
        labels[members] = n_lines
        n_lines += 1
    return labels


def ray_triangle_hits(origins, direction, tris, max_t=np.inf):
    """Nearest triangle hit along a common direction (Moller-Trumbore), -1 for none."""
    v0, v1, v2 = tris[:, 0], tris[:, 1], tris[:, 2]
    e1, e2 = v1 - v0, v2 - v0
    pvec = np.cross(direction, e2)
    det = np.einsum("ij,ij->i", e1, pvec)
    ok = np.abs(det) > 1e-14
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    best_t = np.full(len(origins), np.inf)
    best = np.full(len(origins), -1)
    for start in range(0, len(origins), 256):
        o = origins[start:start + 256]
        tvec = o[:, None, :] - v0[None]
        u = np.einsum("rtk,tk->rt", tvec, pvec) * inv
        qvec = np.cross(tvec, e1[None])
        v = (qvec @ direction) * inv
        t = np.einsum("rtk,tk->rt", qvec, e2) * inv
        hit = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 1e-12) & (t < max_t)
        t = np.where(hit, t, np.inf)
        k = np.argmin(t, axis=1)
        tk = t[np.arange(len(o)), k]
        best_t[start:start + 256] = tk
        best[start:start + 256] = np.where(np.isfinite(tk), k, -1)
    return best, best_t
