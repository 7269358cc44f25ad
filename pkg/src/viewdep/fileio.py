"""File formats: project configs, target images, checkpoints, logs and run outputs.

Everything text-based is JSON or CSV with round-trip-exact floats (``repr``),
sorted keys and LF line endings, so identical runs write identical bytes.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .model import Heightfield
from .optimize import OptimizerConfig, OptimizerState, subdivide_field

logger = logging.getLogger(__name__)

__all__ = [
    "ConfigError",
    "ViewEntry",
    "ExportConfig",
    "ProjectConfig",
    "load_config",
    "parse_config",
    "config_to_dict",
    "echo_config",
    "load_image",
    "save_png",
    "srgb_to_linear",
    "linear_to_srgb",
    "save_checkpoint",
    "load_checkpoint",
    "checkpoint_bytes",
    "history_csv",
    "RunLock",
    "write_manifest",
    "sha256_file",
    "default_output_root",
]

OUTPUT_ROOT_ENV = "VIEWDEP_OUTPUT_ROOT"
CHECKPOINT_FORMAT = "viewdep-checkpoint"
CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    """Invalid project configuration; ``errors`` lists every problem found."""

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


# ---------------------------------------------------------------------------
# project configuration


@dataclass(frozen=True)
class ViewEntry:
    elevation: float
    azimuth: float
    image: str  # absolute path after loading


@dataclass(frozen=True)
class ExportConfig:
    segments_per_bar: int = 1
    base_thickness_mm: float = 0.5
    scale: float = 1.0
    render_samples: int = 4


@dataclass(frozen=True)
class ProjectConfig:
    views: tuple
    image_size: int
    output_dir: str
    optimizer: OptimizerConfig = OptimizerConfig()
    export: ExportConfig = ExportConfig()


def default_output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def _is_dataclass_type(tp) -> bool:
    return isinstance(tp, type) and dataclasses.is_dataclass(tp)


def _check_scalar(value, tp, where: str, errors: list) -> object:
    """Coerce a JSON scalar to the annotated type, recording a problem if impossible."""
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union or (origin is not None and type(None) in args):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _check_scalar(value, inner[0], where, errors)
    if tp is bool:
        if not isinstance(value, bool):
            errors.append(f"{where}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            errors.append(f"{where}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            errors.append(f"{where}: expected a number, got {value!r}")
            return value
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            errors.append(f"{where}: expected a string, got {value!r}")
        return value
    return value


def _build(cls, data, where: str, errors: list):
    """Instantiate a (possibly nested) config dataclass from a JSON object."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        errors.append(f"{where}: expected an object, got {type(data).__name__}")
        return cls()
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in sorted(set(data) - names):
        errors.append(f"{where}.{key}: unknown field (expected one of {sorted(names)})")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        tp = hints[f.name]
        if _is_dataclass_type(tp):
            kwargs[f.name] = _build(tp, data[f.name], f"{where}.{f.name}", errors)
        else:
            kwargs[f.name] = _check_scalar(data[f.name], tp, f"{where}.{f.name}", errors)
    if cls is OptimizerConfig:
        # build without the raising validator, then report every problem at once
        obj = object.__new__(cls)
        for f in dataclasses.fields(cls):
            object.__setattr__(obj, f.name, kwargs.get(f.name, f.default))
        errors.extend(f"{where}: {e}" for e in obj.validate())
        return obj
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        errors.append(f"{where}: {exc}")
        return cls()


def parse_config(data: dict, base_dir: str | Path = ".", check_files: bool = True,
                 default_name: str = "run") -> ProjectConfig:
    """Validate a config mapping; image paths resolve against ``base_dir``.

    Without ``output_dir`` the run goes to ``$VIEWDEP_OUTPUT_ROOT/<default_name>``
    (``runs/`` when the variable is unset).
    """
    errors: list[str] = []
    if not isinstance(data, dict):
        raise ConfigError("config: top level must be an object")
    known = {"views", "image_size", "output_dir", "optimizer", "export"}
    for key in sorted(set(data) - known):
        errors.append(f"config.{key}: unknown field (expected one of {sorted(known)})")
    base_dir = Path(base_dir)

    image_size = data.get("image_size", 32)
    if isinstance(image_size, bool) or not isinstance(image_size, int) or image_size < 1:
        errors.append(f"config.image_size: expected a positive integer, got {image_size!r}")

    views = []
    raw_views = data.get("views")
    if not isinstance(raw_views, list) or not raw_views:
        errors.append("config.views: need a non-empty list of views")
        raw_views = []
    for i, v in enumerate(raw_views):
        where = f"config.views[{i}]"
        if not isinstance(v, dict):
            errors.append(f"{where}: expected an object with elevation, azimuth, image")
            continue
        for key in sorted(set(v) - {"elevation", "azimuth", "image"}):
            errors.append(f"{where}.{key}: unknown field")
        el, az, img = v.get("elevation"), v.get("azimuth"), v.get("image")
        if isinstance(el, bool) or not isinstance(el, (int, float)) or not 0 < el <= 90:
            errors.append(f"{where}.elevation: must be a number in (0, 90], got {el!r}")
        if isinstance(az, bool) or not isinstance(az, (int, float)) or not 0 <= az < 360:
            errors.append(f"{where}.azimuth: must be a number in [0, 360), got {az!r}")
        if not isinstance(img, str) or not img:
            errors.append(f"{where}.image: missing image path")
            continue
        path = Path(img)
        if not path.is_absolute():
            path = base_dir / path
        path = path.resolve()
        if check_files and not path.is_file():
            errors.append(f"{where}.image: file not found: {path}")
        views.append(ViewEntry(float(el) if isinstance(el, (int, float)) else el,
                               float(az) if isinstance(az, (int, float)) else az, str(path)))

    out = data.get("output_dir")
    if out is None:
        out_path = default_output_root() / default_name
    elif not isinstance(out, str) or not out:
        errors.append(f"config.output_dir: expected a path string, got {out!r}")
        out_path = Path("run")
    else:
        out_path = Path(out) if Path(out).is_absolute() else base_dir / out
    optimizer = _build(OptimizerConfig, data.get("optimizer"), "config.optimizer", errors)
    export = _build(ExportConfig, data.get("export"), "config.export", errors)
    if isinstance(export, ExportConfig):
        if isinstance(export.segments_per_bar, int) and export.segments_per_bar < 1:
            errors.append("config.export.segments_per_bar: must be >= 1")
        if isinstance(export.base_thickness_mm, float) and export.base_thickness_mm < 0:
            errors.append("config.export.base_thickness_mm: must be >= 0")
        if isinstance(export.render_samples, int) and export.render_samples < 1:
            errors.append("config.export.render_samples: must be >= 1")
    if errors:
        raise ConfigError(errors)
    return ProjectConfig(tuple(views), int(image_size), str(out_path.resolve()), optimizer, export)


def load_config(path: str | Path, check_files: bool = True) -> ProjectConfig:
    """Read and validate a JSON project config.

    Parse errors report line and column; validation errors list every
    violated constraint.  Nothing is written to disk.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: JSON parse error: {exc.msg}") from None
    return parse_config(data, path.parent, check_files, path.stem)


def config_to_dict(cfg: ProjectConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["views"] = [dataclasses.asdict(v) for v in cfg.views]
    return d


def _dumps(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=1, allow_nan=False) + "\n"


def echo_config(cfg: ProjectConfig, run_dir: str | Path) -> Path:
    """Write the fully resolved config into the run directory.

    When the run directory is the config's own output directory it is
    recorded as ``"."`` (relative to the echoed file), so identical runs in
    different places produce identical files.
    """
    run_dir = Path(run_dir)
    doc = config_to_dict(cfg)
    if Path(cfg.output_dir).resolve() == run_dir.resolve():
        doc["output_dir"] = "."
    path = run_dir / "config.json"
    path.write_text(_dumps(doc), encoding="utf-8", newline="\n")
    return path


# ---------------------------------------------------------------------------
# images


def srgb_to_linear(c):
    c = np.asarray(c, dtype=float)
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(c):
    c = np.clip(np.asarray(c, dtype=float), 0.0, 1.0)
    return np.where(c <= 0.0031308, 12.92 * c, 1.055 * c ** (1 / 2.4) - 0.055)


def _box_resample(img: np.ndarray, size: int) -> np.ndarray:
    n = img.shape[0]
    if n == size:
        return img
    if n % size == 0:
        f = n // size
        return img.reshape(size, f, size, f, 3).mean(axis=(1, 3))
    chans = [np.asarray(Image.fromarray(img[:, :, c].astype(np.float32), mode="F").resize((size, size), Image.BOX),
                        dtype=float) for c in range(3)]
    return np.stack(chans, axis=2)


def load_image(path: str | Path, target_size: int | None = None) -> np.ndarray:
    """Decode a PNG or binary PPM into linear RGB floats in ``[0, 1]``.

    Non-square images are center-cropped (with a warning); the result is box
    filtered to ``target_size`` when given.
    """
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.format not in ("PNG", "PPM"):
                raise ValueError(f"{path}: unsupported image format {im.format}; use PNG or binary PPM")
            arr = np.asarray(im.convert("RGB"), dtype=float) / 255.0
    except OSError as exc:
        raise ValueError(f"{path}: cannot decode image ({exc})") from None
    h, w = arr.shape[:2]
    if h != w:
        s = min(h, w)
        top, left = (h - s) // 2, (w - s) // 2
        logger.warning("%s is %dx%d; center-cropping to %dx%d", path, w, h, s, s)
        arr = arr[top:top + s, left:left + s]
    lin = srgb_to_linear(arr)
    if target_size is not None:
        lin = _box_resample(lin, int(target_size))
    return lin


def to_8bit(img) -> np.ndarray:
    """Linear floats -> sRGB-encoded 8-bit values."""
    return np.round(linear_to_srgb(img) * 255.0).astype(np.uint8)


def save_png(path: str | Path, img) -> Path:
    path = Path(path)
    Image.fromarray(to_8bit(img), mode="RGB").save(path, format="PNG")
    return path


# ---------------------------------------------------------------------------
# checkpoints


def _field_to_dict(hf: Heightfield) -> dict:
    return {
        "rows": hf.rows,
        "cols": hf.cols,
        "strip_width_mm": hf.strip_width,
        "h_min": hf.h_min,
        "h_max": hf.h_max,
        "heights": hf.heights.ravel().tolist(),
        "colors": hf.colors.ravel().tolist(),
    }


def _field_from_dict(d: dict) -> Heightfield:
    rows, cols = int(d["rows"]), int(d["cols"])
    heights = np.array(d["heights"], dtype=float).reshape(rows, cols)
    colors = np.array(d["colors"], dtype=float).reshape(rows, cols, 3)
    return Heightfield(heights, colors, d["strip_width_mm"], d["h_min"], d["h_max"])


def _clean(value):
    """Make history values JSON-safe (infinities become null)."""
    if isinstance(value, float) and not np.isfinite(value):
        return None
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    return value


def checkpoint_document(state: OptimizerState, cfg: OptimizerConfig, image_size: int | None = None,
                        extra: dict | None = None) -> dict:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": cfg.to_dict(),
        "image_size": image_size,
        "field": _field_to_dict(state.field),
        "state": {
            "step": state.step,
            "phase": state.phase,
            "temperature": state.temperature,
            "t_heights": state.t_heights,
            "t_colors": state.t_colors,
            "m_heights": state.m_heights.ravel().tolist(),
            "v_heights": state.v_heights.ravel().tolist(),
            "m_colors": state.m_colors.ravel().tolist(),
            "v_colors": state.v_colors.ravel().tolist(),
            "rng": state.rng.bit_generator.state,
            "best_loss": _clean(state.best_loss),
            "best_step": state.best_step,
            "best_field": None if state.best_field is None else _field_to_dict(state.best_field),
            "interrupted": state.interrupted,
        },
        "history": [{k: _clean(v) for k, v in rec.items()} for rec in state.history],
    }
    if extra:
        doc["extra"] = extra
    return doc


def checkpoint_bytes(state: OptimizerState, cfg: OptimizerConfig, image_size: int | None = None,
                     extra: dict | None = None) -> bytes:
    return _dumps(checkpoint_document(state, cfg, image_size, extra)).encode("utf-8")


def save_checkpoint(path: str | Path, state: OptimizerState, cfg: OptimizerConfig,
                    image_size: int | None = None, extra: dict | None = None) -> Path:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(checkpoint_bytes(state, cfg, image_size, extra))
    os.replace(tmp, path)
    return path


def optimizer_config_from_dict(d: dict) -> OptimizerConfig:
    errors: list[str] = []
    cfg = _build(OptimizerConfig, d, "checkpoint.config", errors)
    if errors:
        raise ConfigError(errors)
    return cfg


@dataclass
class Checkpoint:
    state: OptimizerState
    config: OptimizerConfig
    image_size: int | None = None
    extra: dict = field(default_factory=dict)

    @property
    def field(self) -> Heightfield:
        return self.state.field

    @property
    def result_field(self) -> Heightfield:
        """The best field seen so far, at the current resolution (what a run reports on)."""
        best = self.state.best_field
        if best is None:
            return self.state.field
        while best.rows < self.state.field.rows:
            best = subdivide_field(best)
        return best


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"checkpoint not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: checkpoint parse error: {exc.msg}") from None
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path}: not a checkpoint file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    cfg = optimizer_config_from_dict(doc["config"])
    hf = _field_from_dict(doc["field"])
    s = doc["state"]
    shape = hf.heights.shape
    rng = np.random.default_rng()
    rng.bit_generator.state = s["rng"]
    best_loss = s["best_loss"]
    state = OptimizerState(
        field=hf,
        m_heights=np.array(s["m_heights"], dtype=float).reshape(shape),
        v_heights=np.array(s["v_heights"], dtype=float).reshape(shape),
        m_colors=np.array(s["m_colors"], dtype=float).reshape(shape + (3,)),
        v_colors=np.array(s["v_colors"], dtype=float).reshape(shape + (3,)),
        t_heights=int(s["t_heights"]),
        t_colors=int(s["t_colors"]),
        step=int(s["step"]),
        phase=s["phase"],
        temperature=float(s["temperature"]),
        rng=rng,
        history=[dict(rec) for rec in doc["history"]],
        best_field=None if s["best_field"] is None else _field_from_dict(s["best_field"]),
        best_loss=float("inf") if best_loss is None else float(best_loss),
        best_step=int(s["best_step"]),
        interrupted=bool(s["interrupted"]),
    )
    return Checkpoint(state, cfg, doc.get("image_size"), doc.get("extra") or {})


# ---------------------------------------------------------------------------
# logs, manifests, locks

HISTORY_COLUMNS = ("step", "phase", "resolution", "k", "mse", "barrier", "neighbor", "total",
                   "exact_mse", "exact_total", "best_total")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def history_csv(history, columns=HISTORY_COLUMNS) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for rec in history:
        writer.writerow([_fmt(rec.get(c)) for c in columns])
    return buf.getvalue()


def rows_csv(rows: list[dict], columns) -> str:
    return history_csv(rows, columns)


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(run_dir: str | Path, files, status: str, summary: dict | None = None) -> Path:
    """List every artifact with its SHA-256; no timestamps so reruns hash identically."""
    run_dir = Path(run_dir)
    entries = []
    for f in sorted(Path(p) for p in files):
        rel = f.relative_to(run_dir) if f.is_absolute() else f
        entries.append({"path": rel.as_posix(), "sha256": sha256_file(run_dir / rel), "bytes": (run_dir / rel).stat().st_size})
    doc = {"status": status, "files": entries, "summary": {k: _clean(v) for k, v in (summary or {}).items()}}
    path = run_dir / "manifest.json"
    path.write_text(_dumps(doc), encoding="utf-8", newline="\n")
    return path


class RunLock:
    """Exclusive ownership of a run directory via an ``O_EXCL`` lock file."""

    NAME = ".lock"

    def __init__(self, run_dir: str | Path):
        self.path = Path(run_dir) / self.NAME
        self._held = False

    def acquire(self) -> RunLock:
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RuntimeError(f"run directory is in use ({self.path} exists; remove it if the owning run died)") from None
        with os.fdopen(fd, "w") as fh:
            fh.write(f"{os.getpid()}\n")
        self._held = True
        return self

    def release(self) -> None:
        if self._held:
            self.path.unlink(missing_ok=True)
            self._held = False

    def __enter__(self) -> RunLock:
        return self.acquire()

    def __exit__(self, *exc) -> None:
        self.release()
