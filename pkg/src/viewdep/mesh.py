"""Printable mesh export: one closed cuboid shell per bar plus an optional base slab.

Each bar spans ``[j w, (j+1) w] x [i w, (i+1) w] x [0, h]``.  With ``S``
color bands the four side walls are cut at heights ``b h / S``; the top face
takes the uppermost band and the bottom face the lowest.  A bar shell has
``4 (S + 1)`` vertices and ``8 S + 4`` triangles, with outward winding.

Materials are keyed by the sRGB 8-bit color (the same encoding as the PNG
outputs), so every distinct quantized color appears exactly once.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fileio import linear_to_srgb, srgb_to_linear
from .model import Heightfield

logger = logging.getLogger(__name__)

__all__ = ["MeshBundle", "bar_shell", "export_mesh", "write_obj", "read_obj", "mesh_counts", "BASE_COLOR"]

BASE_COLOR = (1.0, 1.0, 1.0)


@dataclass
class MeshBundle:
    vertices: np.ndarray        # (V, 3) millimeters
    faces: np.ndarray           # (F, 3) zero-based vertex indices
    face_material: np.ndarray   # (F,) index into materials
    materials: np.ndarray       # (M, 3) uint8 sRGB
    shells: list                # (first_face, n_faces) per closed shell

    @property
    def material_names(self) -> list[str]:
        return [material_name(c) for c in self.materials]

    def triangles(self) -> np.ndarray:
        return self.vertices[self.faces]


def material_name(rgb8) -> str:
    r, g, b = (int(v) for v in rgb8)
    return f"c{r:02x}{g:02x}{b:02x}"


def quantize(colors) -> np.ndarray:
    """Linear colors -> sRGB 8-bit triples."""
    return np.round(linear_to_srgb(colors) * 255.0).astype(np.uint8)


def mesh_counts(rows: int, cols: int, segments: int = 1, base: bool = True) -> tuple[int, int]:
    """Closed-form (vertices, triangles) for a field export."""
    nv = rows * cols * 4 * (segments + 1) + (8 if base else 0)
    nf = rows * cols * (8 * segments + 4) + (12 if base else 0)
    return nv, nf


def bar_shell(x0, y0, x1, y1, z0, z1, segments: int = 1):
    """Vertices, triangles and per-triangle band index of one cuboid.

    Band ``-1`` marks the bottom face and ``segments`` the top face; the
    caller maps those to the lowest and uppermost band colors.
    """
    S = segments
    corners = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]  # counter-clockwise seen from above
    levels = np.linspace(z0, z1, S + 1)
    verts = np.array([(x, y, z) for z in levels for (x, y) in corners], dtype=float)

    def vid(level, corner):
        return 4 * level + corner % 4

    faces, bands = [], []
    for lev in range(S):
        for c in range(4):
            a, b = vid(lev, c), vid(lev, c + 1)
            a2, b2 = vid(lev + 1, c), vid(lev + 1, c + 1)
            faces += [(a, b, b2), (a, b2, a2)]
            bands += [lev, lev]
    top = [vid(S, c) for c in range(4)]
    faces += [(top[0], top[1], top[2]), (top[0], top[2], top[3])]
    bands += [S, S]
    bot = [vid(0, c) for c in range(4)]
    faces += [(bot[0], bot[2], bot[1]), (bot[0], bot[3], bot[2])]
    bands += [-1, -1]
    return verts, np.array(faces, dtype=np.int64), np.array(bands)


def export_mesh(hf: Heightfield, segments: np.ndarray | None = None, scale: float = 1.0,
                base_thickness: float = 0.0, base_color=BASE_COLOR) -> MeshBundle:
    """Build the mesh of a field; ``segments`` has shape ``(rows, cols, S, 3)``."""
    if segments is None:
        seg = hf.colors[:, :, None, :]
    else:
        seg = np.asarray(segments, dtype=float)
        if seg.ndim != 4 or seg.shape[:2] != hf.heights.shape or seg.shape[3] != 3:
            raise ValueError(f"segments must have shape (rows, cols, S, 3), got {seg.shape}")
    if scale <= 0:
        raise ValueError("scale must be positive")
    if base_thickness < 0:
        raise ValueError("base_thickness must be >= 0")
    S = seg.shape[2]
    w = hf.strip_width
    seg8 = quantize(seg)
    palette = {}

    def mat(rgb8) -> int:
        key = tuple(int(v) for v in rgb8)
        return palette.setdefault(key, len(palette))

    verts, faces, fmat, shells = [], [], [], []
    n_v = n_f = 0
    for i in range(hf.rows):
        for j in range(hf.cols):
            h = hf.heights[i, j]
            v, f, bands = bar_shell(j * w, i * w, (j + 1) * w, (i + 1) * w, 0.0, h, S)
            band_mat = [mat(seg8[i, j, b]) for b in range(S)]
            idx = np.clip(bands, 0, S - 1)
            verts.append(v)
            faces.append(f + n_v)
            fmat.append(np.array([band_mat[b] for b in idx]))
            shells.append((n_f, len(f)))
            n_v += len(v)
            n_f += len(f)
    if base_thickness > 0:
        X, Y = hf.extent
        v, f, _ = bar_shell(0.0, 0.0, X, Y, -base_thickness, 0.0, 1)
        m = mat(quantize(np.asarray(base_color, dtype=float)))
        verts.append(v)
        faces.append(f + n_v)
        fmat.append(np.full(len(f), m))
        shells.append((n_f, len(f)))
    materials = np.array(sorted(palette, key=palette.get), dtype=np.uint8).reshape(-1, 3)
    return MeshBundle(np.concatenate(verts) * scale, np.concatenate(faces), np.concatenate(fmat),
                      materials, shells)


def write_obj(mesh: MeshBundle, obj_path: str | Path, mtl_path: str | Path | None = None) -> tuple[Path, Path]:
    """Write OBJ + MTL; faces are grouped by material with one ``usemtl`` per group."""
    obj_path = Path(obj_path)
    mtl_path = Path(mtl_path) if mtl_path is not None else obj_path.with_suffix(".mtl")
    names = mesh.material_names
    lines = ["# viewdep heightfield mesh (units: mm)", f"mtllib {mtl_path.name}"]
    lines += [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    order = np.argsort(mesh.face_material, kind="stable")
    current = None
    for fi in order:
        m = mesh.face_material[fi]
        if m != current:
            lines.append(f"usemtl {names[m]}")
            current = m
        a, b, c = (mesh.faces[fi] + 1).tolist()
        lines.append(f"f {a} {b} {c}")
    obj_path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")

    mtl = []
    for name, rgb in zip(names, mesh.materials):
        r, g, b = (int(v) / 255.0 for v in rgb)
        mtl += [f"newmtl {name}", f"Kd {r!r} {g!r} {b!r}", "illum 0", ""]
    mtl_path.write_text("\n".join(mtl), encoding="utf-8", newline="\n")
    return obj_path, mtl_path


def read_obj(obj_path: str | Path):
    """Parse an OBJ written by :func:`write_obj`.

    Returns ``(vertices, faces, face_colors)`` with linear RGB face colors
    taken from the referenced MTL file.
    """
    obj_path = Path(obj_path)
    verts, faces, face_mat = [], [], []
    mtllib, current = None, None
    for line in obj_path.read_text(encoding="utf-8").splitlines():
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] == "v":
            verts.append([float(p) for p in parts[1:4]])
        elif parts[0] == "f":
            faces.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
            face_mat.append(current)
        elif parts[0] == "usemtl":
            current = parts[1]
        elif parts[0] == "mtllib":
            mtllib = parts[1]
    kd = {}
    if mtllib is not None:
        name = None
        for line in (obj_path.parent / mtllib).read_text(encoding="utf-8").splitlines():
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "newmtl":
                name = parts[1]
            elif parts[0] == "Kd" and name is not None:
                kd[name] = [float(p) for p in parts[1:4]]
    colors = np.array([srgb_to_linear(kd[m]) if m in kd else (0.5, 0.5, 0.5) for m in face_mat], dtype=float)
    return np.array(verts, dtype=float), np.array(faces, dtype=np.int64), colors.reshape(-1, 3)
