"""Checkpoints, PGM rasters, CSV curves and run configuration.

Checkpoint layout (all integers little-endian)::

    b"CTXN" | u32 version | u32 metadata length | UTF-8 JSON metadata | float32 payloads

The metadata lists every array as ``{"name", "shape"}`` (plus ``"index"`` for
context-bank blocks) in payload order, alongside the module name, grid spec,
seed, hyperparameters and metrics.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import geometry
from .autoencoder import AutoencoderParams
from .baseline import BaselineParams
from .classifier import ClassifierParams
from .contexts import ContextBank, ContextNetParams
from .errors import ContractError, DependencyError, FormatError, ShapeError

MAGIC = b"CTXN"
VERSION = 1
_HEAD = struct.Struct("<4sII")


@dataclass
class Checkpoint:
    section: str
    arrays: dict
    meta: dict = field(default_factory=dict)


def _params_arrays(section: str, params):
    """Ordered (name, array, extra-metadata) triples for any module's parameters."""
    if isinstance(params, ContextBank) or (isinstance(params, list) and params
                                           and isinstance(params[0], ContextNetParams)):
        nets = params.nets if isinstance(params, ContextBank) else params
        out = []
        for net in nets:
            for name, arr in net.arrays().items():
                out.append((f"ctx{net.index:03d}.{name}", arr, {"index": net.index}))
        return out
    arrays = params if isinstance(params, dict) else params.arrays()
    return [(name, arr, {}) for name, arr in arrays.items()]


def save_checkpoint(section: str, params, path, meta: dict | None = None) -> None:
    entries = _params_arrays(section, params)
    info = dict(meta or {})
    info["section"] = section
    if isinstance(params, ContextBank):
        info.setdefault("grid", params.spec.to_dict())
    info["arrays"] = [{"name": n, "shape": list(np.shape(a)), **extra} for n, a, extra in entries]
    blob = json.dumps(info, sort_keys=True).encode("utf-8")
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as f:
            f.write(_HEAD.pack(MAGIC, VERSION, len(blob)))
            f.write(blob)
            for _, arr, _ in entries:
                f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    except OSError as exc:
        raise OSError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path, section: str | None = None) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise DependencyError(f"missing {section or 'checkpoint'} checkpoint: {path}")
    buf = path.read_bytes()
    if len(buf) < _HEAD.size:
        raise FormatError(f"{path}: too short to be a checkpoint")
    magic, version, meta_len = _HEAD.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    start = _HEAD.size + meta_len
    if len(buf) < start:
        raise FormatError(f"{path}: metadata block truncated")
    try:
        meta = json.loads(buf[_HEAD.size:start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable metadata ({exc})") from exc
    if section is not None and meta.get("section") != section:
        raise FormatError(f"{path}: holds section {meta.get('section')!r}, expected {section!r}")
    specs = meta.get("arrays", [])
    sizes = [int(np.prod(s["shape"], dtype=np.int64)) for s in specs]
    payload = len(buf) - start
    if payload != 4 * sum(sizes):
        raise ShapeError(f"{path}: metadata shapes describe {4 * sum(sizes)} payload bytes but file has {payload}")
    arrays, off = {}, start
    for s, n in zip(specs, sizes):
        arrays[s["name"]] = np.frombuffer(buf, dtype="<f4", count=n, offset=off).reshape(s["shape"]).astype(np.float32)
        off += 4 * n
    return Checkpoint(meta["section"], arrays, meta)


def _expect_shapes(ckpt: Checkpoint, reference: dict, path) -> None:
    for name, ref in reference.items():
        if name not in ckpt.arrays:
            raise ShapeError(f"{path}: array {name!r} missing")
        if ckpt.arrays[name].shape != np.shape(ref):
            raise ShapeError(f"{path}: array {name!r} has shape {ckpt.arrays[name].shape}, expected {np.shape(ref)}")


def load_autoencoder(path) -> tuple[AutoencoderParams, dict]:
    ckpt = load_checkpoint(path, "autoencoder")
    _expect_shapes(ckpt, AutoencoderParams.init(0).arrays(), path)
    return AutoencoderParams.from_arrays(ckpt.arrays), ckpt.meta


def load_bank(path) -> tuple[ContextBank, dict]:
    ckpt = load_checkpoint(path, "context-bank")
    ref = ContextNetParams.init(0, 0).arrays()
    nets = []
    for index in sorted({s["index"] for s in ckpt.meta["arrays"]}):
        block = {k: ckpt.arrays[f"ctx{index:03d}.{k}"] for k in ref}
        for k, v in block.items():
            if v.shape != ref[k].shape:
                raise ShapeError(f"{path}: context {index} array {k!r} has shape {v.shape}, expected {ref[k].shape}")
        nets.append(ContextNetParams.from_arrays(index, block))
    spec = geometry.ContextGridSpec.from_dict(ckpt.meta["grid"]) if "grid" in ckpt.meta else geometry.DEFAULT_GRID
    return ContextBank(nets, spec), ckpt.meta


def load_classifier(path) -> tuple[ClassifierParams, dict]:
    ckpt = load_checkpoint(path, "classifier")
    _expect_shapes(ckpt, ClassifierParams.init(0).arrays(), path)
    return ClassifierParams.from_arrays(ckpt.arrays), ckpt.meta


def load_baseline(path) -> tuple[BaselineParams, dict]:
    ckpt = load_checkpoint(path, "baseline")
    _expect_shapes(ckpt, BaselineParams.init(0).arrays(), path)
    return BaselineParams.from_arrays(ckpt.arrays), ckpt.meta


def to_bytes(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ContractError(f"raster must be 2-D, got shape {img.shape}")
    if not np.all(np.isfinite(img)) or img.min(initial=0.0) < 0.0 or img.max(initial=0.0) > 1.0:
        raise ContractError("raster pixels must lie in [0, 1]")
    return np.rint(img * 255.0).astype(np.uint8)


def write_raster(img, path) -> None:
    """Binary PGM (P5, maxval 255), pixel byte = round(value * 255)."""
    data = to_bytes(img)
    h, w = data.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def read_raster(path) -> np.ndarray:
    """Read back a P5 file written by :func:`write_raster` (bytes, shape (h, w))."""
    buf = Path(path).read_bytes()
    parts = buf.split(b"\n", 3)
    if parts[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM")
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8, count=w * h).reshape(h, w)


def write_csv(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow(["" if v is None else v for v in row])


# configuration -------------------------------------------------------------------

@dataclass
class RunConfig:
    data_dir: str | None = None
    seed: int = 0
    epochs: int | None = None
    batch_size: int = 64
    lr: float = 1e-3
    train_size: int | None = None
    augment: bool = False
    jobs: int = 1
    out: str = "runs/default"
    ae: str | None = None
    ctx: str | None = None
    clf: str | None = None
    baseline: str | None = None
    eval_every: int = 10
    index: int = 0
    grid_shifts: str | None = None
    grid_scales: str | None = None
    grid_angles: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.epochs is not None and self.epochs < 0:
            raise ContractError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ContractError("batch_size must be >= 1")
        if not self.lr > 0:
            raise ContractError("lr must be > 0")
        if self.train_size is not None and self.train_size < 0:
            raise ContractError("train_size must be >= 0")
        if self.jobs < 1:
            raise ContractError("jobs must be >= 1")
        if self.eval_every < 1:
            raise ContractError("eval_every must be >= 1")
        self.grid_spec()

    def path_for(self, stage: str) -> Path:
        explicit = getattr(self, stage)
        return Path(explicit) if explicit else Path(self.out) / f"{stage}.ckpt"

    def grid_spec(self) -> geometry.ContextGridSpec:
        def floats(s):
            return None if s is None else [float(v) for v in s.split(",") if v.strip()]
        try:
            return geometry.ContextGridSpec.from_values(floats(self.grid_shifts), floats(self.grid_scales),
                                                        floats(self.grid_angles))
        except ValueError as exc:
            raise ContractError(f"bad context-grid override: {exc}") from exc

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


_BOOL = {"1": True, "true": True, "yes": True, "on": True, "0": False, "false": False, "no": False, "off": False}


def _coerce(name: str, raw: str):
    kinds = {"seed": int, "epochs": int, "batch_size": int, "train_size": int, "jobs": int, "eval_every": int,
             "index": int, "lr": float}
    if name == "augment":
        try:
            return _BOOL[raw.strip().lower()]
        except KeyError:
            raise ContractError(f"config key augment: cannot read {raw!r} as a boolean") from None
    if name in kinds:
        try:
            return kinds[name](raw)
        except ValueError:
            raise ContractError(f"config key {name}: cannot read {raw!r} as {kinds[name].__name__}") from None
    return raw


def read_config_file(path) -> dict:
    """Flat ``key = value`` file; blank lines and ``#`` comments are ignored."""
    known = {f.name for f in fields(RunConfig)}
    values = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ContractError(f"{path}:{lineno}: expected key=value")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in known:
            raise ContractError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = _coerce(key, raw)
    return values


def resolve_config(file_values: dict, overrides: dict, defaults: dict | None = None) -> RunConfig:
    """Embedded defaults < per-command defaults < config file < command-line flags."""
    merged = dict(defaults or {})
    merged.update(file_values)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**merged)
