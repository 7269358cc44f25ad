"""End-to-end runs: config in, run directory with renders, logs, mesh and manifest out."""
from __future__ import annotations

import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

from .fileio import (ProjectConfig, RunLock, echo_config, history_csv, load_checkpoint, load_image, save_checkpoint,
                     save_png, write_manifest)
from .mesh import export_mesh, write_obj
from .model import ViewSpec
from .objective import mse_loss
from .optimize import OptimizeResult, OptimizerState, optimize, project_colors
from .render import render_hard, render_view

logger = logging.getLogger(__name__)

__all__ = ["load_views", "run_project", "write_outputs", "CHECKPOINT_NAME"]

CHECKPOINT_NAME = "checkpoint.json"


def load_views(project: ProjectConfig) -> list[ViewSpec]:
    m = project.image_size
    return [ViewSpec(v.elevation, v.azimuth, m, load_image(v.image, m)) for v in project.views]


def write_outputs(run_dir: str | Path, project: ProjectConfig, views: list[ViewSpec],
                  state: OptimizerState, result: OptimizeResult | None) -> dict:
    """Write every artifact of a run and the manifest.

    A finished run gets per-view smooth and hard renders, the loss CSV, the
    checkpoint, OBJ/MTL mesh files and a manifest with status ``complete``.
    An interrupted run (``result is None``) gets the checkpoint alone and a
    manifest with status ``partial``.
    """
    run_dir = Path(run_dir)
    cfg = project.optimizer
    files = [run_dir / "config.json"] if (run_dir / "config.json").exists() else []
    ckpt = save_checkpoint(run_dir / CHECKPOINT_NAME, state, cfg, project.image_size)
    files.append(ckpt)
    if result is None:
        write_manifest(run_dir, files, "partial", {"step": state.step})
        return {"status": "partial", "step": state.step}

    hf = result.field
    spec = cfg.heaviside.with_k(cfg.k_at(max(cfg.total_steps - 1, 0)))
    samples = project.export.render_samples
    renders = run_dir / "renders"
    renders.mkdir(exist_ok=True)
    hard_images, masks = [], []
    for v, view in enumerate(views):
        smooth = render_view(hf, view, spec, cfg.tiling, view_index=v)
        hard = render_hard(hf, view, cfg.tiling, samples=samples)
        hard_images.append(hard.image)
        masks.append(hard.miss_mask if cfg.loss.background_policy == "mask" else None)
        files.append(save_png(renders / f"view{v}_smooth.png", smooth.image))
        files.append(save_png(renders / f"view{v}_hard.png", hard.image))
    (run_dir / "loss.csv").write_text(history_csv(state.history), encoding="utf-8", newline="\n")
    files.append(run_dir / "loss.csv")

    segments = None
    if project.export.segments_per_bar > 1:
        segments = project_colors(hf, views, project.export.segments_per_bar, cfg.tiling)
    mesh = export_mesh(hf, segments, project.export.scale, project.export.base_thickness_mm)
    obj, mtl = write_obj(mesh, run_dir / "mesh.obj", run_dir / "mesh.mtl")
    files += [obj, mtl]
    summary = {
        "final_mse": result.final.mse,
        "final_total": result.final.total,
        "preview_mse": mse_loss(hard_images, [vw.desired for vw in views], masks),
        "best_step": state.best_step,
        "steps": state.step,
    }
    write_manifest(run_dir, files, "complete", summary)
    return {"status": "complete", **summary}


def run_project(project: ProjectConfig, run_dir: str | Path | None = None, resume: bool = False,
                views: list[ViewSpec] | None = None) -> dict:
    """Optimize a validated project and write its run directory.

    The directory is locked for the duration; an interrupt (Ctrl-C) leaves a
    resumable checkpoint and a partial manifest.
    """
    run_dir = Path(run_dir or project.output_dir)
    views = views if views is not None else load_views(project)
    run_dir.mkdir(parents=True, exist_ok=True)
    with RunLock(run_dir):
        echo_config(project, run_dir)
        state = None
        if resume:
            ck = load_checkpoint(run_dir / CHECKPOINT_NAME)
            state = ck.state
            project = replace(project, optimizer=ck.config)
            logger.info("resuming at step %d", state.step)
        result = optimize(views, project.optimizer, state=state)
        if result.state.interrupted:
            out = write_outputs(run_dir, project, views, result.state, None)
        else:
            out = write_outputs(run_dir, project, views, result.state, result)
    out["run_dir"] = str(run_dir)
    return out


def image_mse(image: np.ndarray, desired: np.ndarray) -> float:
    return mse_loss([image], [desired])
