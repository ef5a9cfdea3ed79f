"""MNIST IDX parsing and deterministic batching."""

from __future__ import annotations

import gzip
import os
import struct
import urllib.request
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import LengthError, FormatError, RangeError, UnsupportedShapeError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
SIDE = 28

FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def _header(buf: bytes, n_fields: int, magic: int, what: str):
    size = 4 * n_fields
    if len(buf) < size:
        raise LengthError(f"{what}: header needs {size} bytes, got {len(buf)}")
    fields = struct.unpack(f">{n_fields}I", buf[:size])
    if fields[0] != magic:
        raise FormatError(f"{what}: bad magic 0x{fields[0]:08x}, expected 0x{magic:08x}")
    return fields[1:], size


def parse_idx_images(buf: bytes) -> np.ndarray:
    """Decode an IDX3 image file into float32 images (count, 28, 28) in [0, 1]."""
    (count, rows, cols), off = _header(buf, 4, IMAGE_MAGIC, "image file")
    if rows != SIDE or cols != SIDE:
        raise UnsupportedShapeError(f"image file holds {rows}x{cols} images; only 28x28 is supported")
    need = count * rows * cols
    if len(buf) - off < need:
        raise LengthError(f"image file declares {count} images ({need} bytes) but has {len(buf) - off}")
    raw = np.frombuffer(buf, dtype=np.uint8, count=need, offset=off)
    return (raw.astype(np.float32) / np.float32(255)).reshape(count, rows, cols)


def parse_idx_labels(buf: bytes) -> np.ndarray:
    (count,), off = _header(buf, 2, LABEL_MAGIC, "label file")
    if len(buf) - off < count:
        raise LengthError(f"label file declares {count} labels but has {len(buf) - off} bytes")
    labels = np.frombuffer(buf, dtype=np.uint8, count=count, offset=off).astype(np.int64)
    if count and labels.max() > 9:
        bad = int(np.argmax(labels > 9))
        raise RangeError(f"label {labels[bad]} at position {bad} is outside 0..9")
    return labels


def encode_idx_images(images) -> bytes:
    """Inverse of :func:`parse_idx_images`: pixel value v is stored as round(v * 255)."""
    images = np.asarray(images)
    n, rows, cols = images.shape
    payload = np.rint(np.clip(images, 0, 1) * 255).astype(np.uint8)
    return struct.pack(">4I", IMAGE_MAGIC, n, rows, cols) + payload.tobytes()


def encode_idx_labels(labels) -> bytes:
    labels = np.asarray(labels, dtype=np.uint8)
    return struct.pack(">2I", LABEL_MAGIC, len(labels)) + labels.tobytes()


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray  # (N, 28, 28) float32
    labels: np.ndarray  # (N,) int64
    split: str = "train"

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise FormatError(f"{len(self.images)} images but {len(self.labels)} labels")
        for arr in (self.images, self.labels):
            if arr.flags.writeable:
                arr.flags.writeable = False

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, i):
        return self.images[i], int(self.labels[i])


def take_prefix(ds: Dataset, n: int) -> Dataset:
    """First ``n`` items in file order."""
    if n < 0 or n > len(ds):
        raise RangeError(f"cannot take {n} items from a dataset of {len(ds)}")
    return Dataset(ds.images[:n], ds.labels[:n], ds.split)


def batches(ds_or_size, batch_size: int, seed: int, epoch: int = 0):
    """Yield index arrays covering a seeded permutation of the items.

    The permutation depends on (seed, epoch) only, so the sequence can be
    reproduced for any epoch without replaying earlier ones.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    n = ds_or_size if isinstance(ds_or_size, (int, np.integer)) else len(ds_or_size)
    perm = np.random.default_rng([seed, epoch]).permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start:start + batch_size]


def _read(path: Path) -> bytes:
    if path.exists():
        return path.read_bytes()
    gz = path.with_name(path.name + ".gz")
    if gz.exists():
        return gzip.decompress(gz.read_bytes())
    raise FileNotFoundError(f"missing MNIST file {path} (or {gz.name})")


def default_data_dir() -> Path:
    return Path(os.environ.get("CTXNET_DATA_DIR", "data/mnist"))


def load_mnist(split: str, data_dir=None) -> Dataset:
    """Load the canonical train (60,000) or test (10,000) split from ``data_dir``."""
    img_name, lbl_name = FILES[split]
    root = Path(data_dir) if data_dir is not None else default_data_dir()
    images = parse_idx_images(_read(root / img_name))
    labels = parse_idx_labels(_read(root / lbl_name))
    return Dataset(images, labels, split)


def fetch_mnist(dest, base_url: str) -> list[Path]:
    """Download the four gzip files from ``base_url`` into ``dest`` (optional helper)."""
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    written = []
    for names in FILES.values():
        for name in names:
            target = dest / (name + ".gz")
            if not target.exists() and not (dest / name).exists():
                urllib.request.urlretrieve(f"{base_url.rstrip('/')}/{name}.gz", target)
            written.append(target)
    return written
