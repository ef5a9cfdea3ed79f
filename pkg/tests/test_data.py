import struct

import numpy as np
import pytest

from ctxnet import data
from ctxnet.errors import FormatError, LengthError, RangeError, UnsupportedShapeError

from conftest import mnist_dir, needs_mnist


def image_file(payload: bytes, n: int, rows=28, cols=28, magic=0x803) -> bytes:
    return struct.pack(">4I", magic, n, rows, cols) + payload


def test_constant_images_map_to_endpoints():
    buf = image_file(bytes(784) + bytes([255]) * 784, 2)
    imgs = data.parse_idx_images(buf)
    assert imgs.shape == (2, 28, 28)
    assert np.all(imgs[0] == 0.0) and np.all(imgs[1] == 1.0)


def test_image_errors():
    with pytest.raises(FormatError):
        data.parse_idx_images(image_file(bytes(784), 1, magic=0x801))
    with pytest.raises(LengthError):
        data.parse_idx_images(image_file(bytes(784 + 400), 2))
    with pytest.raises(UnsupportedShapeError):
        data.parse_idx_images(image_file(bytes(32 * 32), 1, 32, 32))
    with pytest.raises(LengthError):
        data.parse_idx_images(b"\x00\x00\x08")


def test_labels():
    buf = struct.pack(">2I", 0x801, 3) + bytes([0, 5, 9])
    assert list(data.parse_idx_labels(buf)) == [0, 5, 9]
    with pytest.raises(RangeError):
        data.parse_idx_labels(struct.pack(">2I", 0x801, 2) + bytes([3, 12]))
    with pytest.raises(FormatError):
        data.parse_idx_labels(struct.pack(">2I", 0x803, 1) + bytes([1]))
    with pytest.raises(LengthError):
        data.parse_idx_labels(struct.pack(">2I", 0x801, 4) + bytes([1, 2]))


def test_idx_round_trip_exact(rng):
    raw = rng.integers(0, 256, size=(5, 28, 28), dtype=np.uint8)
    imgs = data.parse_idx_images(image_file(raw.tobytes(), 5))
    again = data.parse_idx_images(data.encode_idx_images(imgs))
    assert again.tobytes() == imgs.tobytes()
    labels = rng.integers(0, 10, size=17)
    assert np.array_equal(data.parse_idx_labels(data.encode_idx_labels(labels)), labels)


def test_normalization_monotone():
    imgs = data.parse_idx_images(image_file(np.arange(256, dtype=np.uint8).repeat(4)[:784].tobytes(), 1))
    flat = imgs.ravel()
    assert np.all(np.diff(flat) >= 0) and flat[0] == 0.0


def test_take_prefix(small_ds):
    assert data.take_prefix(small_ds, len(small_ds)).images.tobytes() == small_ds.images.tobytes()
    assert len(data.take_prefix(small_ds, 0)) == 0
    head = data.take_prefix(small_ds, 10)
    assert np.array_equal(head.labels, small_ds.labels[:10])
    with pytest.raises(RangeError):
        data.take_prefix(small_ds, len(small_ds) + 1)


def test_batches_cover_each_item_once_per_epoch():
    for epoch in range(3):
        idx = np.concatenate(list(data.batches(103, 10, seed=4, epoch=epoch)))
        assert sorted(idx) == list(range(103))
    sizes = [len(b) for b in data.batches(103, 10, seed=4)]
    assert sizes[-1] == 3


def test_batches_determinism():
    a = [b.tolist() for b in data.batches(100, 7, seed=3)]
    assert a == [b.tolist() for b in data.batches(100, 7, seed=3)]
    one = list(data.batches(100, 500, seed=3))
    assert len(one) == 1 and sorted(one[0]) == list(range(100))
    other = np.concatenate(list(data.batches(100, 100, seed=4)))
    assert not np.array_equal(np.concatenate(a), other)


@needs_mnist
def test_canonical_files():
    train = data.load_mnist("train", mnist_dir())
    test = data.load_mnist("test", mnist_dir())
    assert len(train) == 60000 and len(test) == 10000
    assert train.images.dtype == np.float32 and train.images.min() == 0.0 and train.images.max() == 1.0
    head = data.take_prefix(train, 1000)
    assert len(head) == 1000 and list(head.labels[:5]) == [5, 0, 4, 1, 9]
    assert list(test.labels[:5]) == [7, 2, 1, 0, 4]
