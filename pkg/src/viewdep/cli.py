"""Command-line interface.

Exit codes: 0 success, 2 usage or configuration error, 3 runtime failure.
Errors are reported on stderr as one JSON line; stdout carries only the
result summary of the command.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .fileio import (ConfigError, ProjectConfig, default_output_root, load_checkpoint, load_config, load_image,
                     rows_csv, save_png)
from .gradients import grad_check
from .heaviside import HeavisideKind
from .mesh import export_mesh, write_obj
from .model import Heightfield, ViewSpec
from .objective import LossConfig, mse_loss
from .optimize import OptimizerConfig, initial_field, project_colors

logger = logging.getLogger("viewdep")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3


class UsageError(Exception):
    """Bad flags or inputs detected before any work is done."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse calls this on bad flags
        raise UsageError(f"{self.prog}: {message}")


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


def _view_arg(text: str) -> tuple[float, float]:
    try:
        el, az = (float(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"view must be 'elevation,azimuth', got {text!r}") from None
    if not 0 < el <= 90 or not 0 <= az < 360:
        raise argparse.ArgumentTypeError(f"view angles out of range: {text!r}")
    return el, az


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _load_project(path, check_files=True) -> ProjectConfig:
    try:
        return load_config(path, check_files=check_files)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None


def _optimizer_overrides(cfg: OptimizerConfig, args) -> OptimizerConfig:
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seed=args.seed)
    if getattr(args, "steps", None) is not None:
        cfg = cfg.replace(total_steps=args.steps)
    if getattr(args, "no_anneal", False):
        cfg = cfg.replace(annealing=replace(cfg.annealing, enabled=False))
    errors = cfg.validate()
    if errors:
        raise UsageError("; ".join(errors))
    return cfg


# ---------------------------------------------------------------------------
# commands


def cmd_optimize(args) -> int:
    from .pipeline import load_views, run_project

    project = _load_project(args.config)
    project = replace(project, optimizer=_optimizer_overrides(project.optimizer, args))
    if args.output:
        project = replace(project, output_dir=str(Path(args.output).resolve()))
    views = load_views(project)
    out = run_project(project, resume=args.resume, views=views)
    _emit(out)
    return EXIT_OK if out["status"] == "complete" else EXIT_RUNTIME


def _checkpoint_field(path) -> tuple[Heightfield, object]:
    try:
        ck = load_checkpoint(path)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    return ck.result_field, ck


def cmd_render(args) -> int:
    hf, ck = _checkpoint_field(args.checkpoint)
    size = args.size or ck.image_size or hf.rows
    el, az = args.view
    desired = load_image(args.desired, size) if args.desired else None
    view = ViewSpec(el, az, size, desired)
    if args.hard:
        from .render import render_hard
        out = render_hard(hf, view, args.tiling, samples=args.samples)
    else:
        from .render import render_view
        cfg = ck.config
        spec = cfg.heaviside.with_k(args.k if args.k else cfg.k_at(max(cfg.total_steps - 1, 0)))
        out = render_view(hf, view, spec, args.tiling, samples=args.samples)
    save_png(args.out, out.image)
    summary = {"out": str(args.out), "misses": int(out.miss_mask.sum())}
    if desired is not None:
        summary["mse"] = mse_loss([out.image], [desired], [out.miss_mask])
    _emit(summary)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    if args.config:
        project = _load_project(args.config)
        from .pipeline import load_views
        views = load_views(project)
        cfg = project.optimizer
        hf = initial_field("random", cfg.start_resolution, args.seed, cfg.geometry, cfg.coarse_to_fine.end_resolution)
        loss, spec, tiling = cfg.loss, cfg.heaviside, cfg.tiling
    else:
        n, m = args.size, args.image_size
        hf = Heightfield(rng.uniform(0.05, 0.95, (n, n)), rng.uniform(0, 1, (n, n, 3)), 0.25, 0.0, 1.0)
        views = [ViewSpec(float(rng.uniform(20, 80)), float(rng.uniform(0, 360)), m, rng.uniform(0, 1, (m, m, 3)))
                 for _ in range(2)]
        loss, spec, tiling = LossConfig(), HeavisideKind("tanh", 10.0), 1
    if args.k:
        spec = spec.with_k(args.k)
    report = grad_check(hf, views, spec, loss, n_probes=args.probes, fd_step=args.step, seed=args.seed, tiling=tiling)
    sys.stderr.write(report.to_text())
    if args.csv:
        Path(args.csv).write_text(report.to_csv(), encoding="utf-8", newline="\n")
    _emit({"max_rel_error": report.max_rel_error, "mean_rel_error": report.mean_rel_error,
           "probes": len(report.rows), "flagged": len(report.flagged)})
    return EXIT_OK if report.max_rel_error <= args.tolerance else EXIT_RUNTIME


def _base_config(path) -> tuple[OptimizerConfig, int]:
    if not path:
        return OptimizerConfig(), 32
    project = _load_project(path, check_files=False)
    return project.optimizer, project.image_size


def _write_table(rows, curves, out, curves_out, columns) -> None:
    text = rows_csv(rows, columns)
    if out:
        Path(out).write_text(text, encoding="utf-8", newline="\n")
    else:
        sys.stdout.write(text)
    if curves_out:
        width = max((len(c) for c in curves), default=0)
        header = list(columns[:-3]) + [f"step_{i}" for i in range(width)]
        recs = []
        for r, c in zip(rows, curves):
            rec = {k: r[k] for k in columns[:-3]}
            rec.update({f"step_{i}": v for i, v in enumerate(c)})
            recs.append(rec)
        Path(curves_out).write_text(rows_csv(recs, header), encoding="utf-8", newline="\n")


def cmd_sweep(args) -> int:
    from .experiments import parse_range, sweep
    try:
        grid = parse_range(args.range)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    cfg, size = _base_config(args.config)
    cfg = _optimizer_overrides(cfg, args)
    seeds = list(range(cfg.seed, cfg.seed + args.seeds))
    rows, curves = sweep(args.axis, grid, cfg, size, seeds, args.elevation, args.workers)
    cols = ("axis", "separation", "seed", "elevation_1", "azimuth_1", "elevation_2", "azimuth_2",
            "final_mse", "final_total", "seconds")
    _write_table(rows, curves, args.out, args.curves, cols)
    if args.out:
        _emit({"out": str(args.out), "cells": len(rows)})
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .experiments import ablate
    cfg, size = _base_config(args.config)
    cfg = _optimizer_overrides(cfg, args)
    seeds = list(range(cfg.seed, cfg.seed + args.seeds))
    rows, curves = ablate(args.suite, cfg, image_size=size, seeds=seeds, workers=args.workers)
    cols = ("suite", "target_1", "target_2", "column", "seed", "final_mse", "final_total", "seconds")
    _write_table(rows, curves, args.out, args.curves, cols)
    if args.out:
        _emit({"out": str(args.out), "cells": len(rows)})
    return EXIT_OK


def _segments(args, hf, ck):
    if args.segments <= 1 or not args.config:
        if args.segments > 1:
            raise UsageError("--segments > 1 needs --config to project the desired images")
        return None
    project = _load_project(args.config)
    from .pipeline import load_views
    return project_colors(hf, load_views(project), args.segments, ck.config.tiling)


def cmd_export_mesh(args) -> int:
    hf, ck = _checkpoint_field(args.checkpoint)
    if args.scale <= 0 or args.base_thickness < 0:
        raise UsageError("--scale must be positive and --base-thickness nonnegative")
    segments = _segments(args, hf, ck)
    mesh = export_mesh(hf, segments, args.scale, args.base_thickness)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    obj, mtl = write_obj(mesh, out)
    _emit({"obj": str(obj), "mtl": str(mtl), "vertices": len(mesh.vertices), "triangles": len(mesh.faces),
           "materials": len(mesh.materials)})
    return EXIT_OK


def cmd_project(args) -> int:
    from .pipeline import load_views
    from .render import render_hard
    hf, ck = _checkpoint_field(args.checkpoint)
    project = _load_project(args.config)
    views = load_views(project)
    tiling = ck.config.tiling
    segments = project_colors(hf, views, args.segments, tiling)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    before, after = [], []
    for v, view in enumerate(views):
        pre = render_hard(hf, view, tiling)
        post = render_hard(hf, view, tiling, segments=segments)
        before.append(mse_loss([pre.image], [view.desired], [pre.miss_mask]))
        after.append(mse_loss([post.image], [view.desired], [post.miss_mask]))
        save_png(out_dir / f"view{v}_projected.png", post.image)
    mesh = export_mesh(hf, segments, project.export.scale, project.export.base_thickness_mm)
    write_obj(mesh, out_dir / "mesh.obj")
    _emit({"mse_before": before, "mse_after": after, "out": str(out_dir)})
    return EXIT_OK


def cmd_make_targets(args) -> int:
    from .experiments import TARGET_KINDS, make_target
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for kind in TARGET_KINDS:
        written.append(str(save_png(out / f"{kind}.png", make_target(kind, args.size, args.seed))))
    _emit({"targets": written})
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="viewdep", description="View-dependent heightfield design.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging on stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common_run(sp):
        sp.add_argument("--seed", type=int)
        sp.add_argument("--steps", type=int)
        sp.add_argument("--no-anneal", action="store_true")

    sp = sub.add_parser("optimize", help="run the design loop and write a run directory")
    sp.add_argument("--config", required=True)
    sp.add_argument("--output", help="run directory (default: the config's output_dir)")
    sp.add_argument("--resume", action="store_true", help="continue from the run directory's checkpoint")
    common_run(sp)
    sp.set_defaults(func=cmd_optimize)

    sp = sub.add_parser("render", help="render a stored field from any view")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--view", required=True, type=_view_arg, help="elevation,azimuth in degrees")
    sp.add_argument("--hard", action="store_true", help="exact visibility instead of the smooth surrogate")
    sp.add_argument("--tiling", type=_positive_int, default=1)
    sp.add_argument("--size", type=_positive_int)
    sp.add_argument("--samples", type=_positive_int, default=1, help="rays per pixel along each axis")
    sp.add_argument("--k", type=float)
    sp.add_argument("--desired", help="image to report the MSE against")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_render)

    sp = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    sp.add_argument("--config")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--probes", type=_positive_int, default=100)
    sp.add_argument("--step", type=float, default=1e-4)
    sp.add_argument("--size", type=_positive_int, default=8)
    sp.add_argument("--image-size", type=_positive_int, default=16)
    sp.add_argument("--k", type=float)
    sp.add_argument("--tolerance", type=float, default=1e-3)
    sp.add_argument("--csv")
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("sweep", help="black-vs-white loss over a grid of view separations")
    sp.add_argument("--axis", required=True, choices=("azimuth", "elevation"))
    sp.add_argument("--range", required=True, help="start:stop:step in degrees (inclusive)")
    sp.add_argument("--config")
    sp.add_argument("--elevation", type=float, help="fixed elevation (default 60 for azimuth, 20 for elevation)")
    sp.add_argument("--seeds", type=_positive_int, default=1)
    sp.add_argument("--workers", type=_positive_int, default=1)
    sp.add_argument("--out")
    sp.add_argument("--curves")
    common_run(sp)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("ablate", help="ablation tables over target pairs")
    sp.add_argument("--suite", required=True, choices=("regularization", "optimization", "heaviside"))
    sp.add_argument("--config")
    sp.add_argument("--seeds", type=_positive_int, default=1)
    sp.add_argument("--workers", type=_positive_int, default=1)
    sp.add_argument("--out")
    sp.add_argument("--curves")
    common_run(sp)
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("export-mesh", help="write OBJ/MTL for a stored field")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--out", required=True, help="OBJ path; the MTL is written next to it")
    sp.add_argument("--scale", type=float, default=1.0)
    sp.add_argument("--base-thickness", type=float, default=0.5)
    sp.add_argument("--segments", type=_positive_int, default=1)
    sp.add_argument("--config", help="project config whose images are projected onto the bands")
    sp.set_defaults(func=cmd_export_mesh)

    sp = sub.add_parser("project", help="paint desired images onto per-bar color bands")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--config", required=True)
    sp.add_argument("--segments", type=_positive_int, default=3)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_project)

    sp = sub.add_parser("make-targets", help="write the black, white, random and stripes target images")
    sp.add_argument("--size", type=_positive_int, default=32)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default=str(default_output_root() / "targets"))
    sp.set_defaults(func=cmd_make_targets)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(json.dumps({"error": "usage", "message": str(exc)}) + "\n")
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(json.dumps({"error": "usage", "message": str(exc)}) + "\n")
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - every failure becomes one JSON line
        logger.debug("failure", exc_info=True)
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
