import os
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ctxnet import autoencoder as ae_mod  # noqa: E402
from ctxnet import contexts  # noqa: E402
from ctxnet import data  # noqa: E402

REPO = Path(__file__).resolve().parents[1]


def mnist_dir():
    env = os.environ.get("CTXNET_DATA_DIR")
    return Path(env) if env else REPO / "data" / "mnist"


def have_mnist():
    root = mnist_dir()
    return all((root / n).exists() or (root / (n + ".gz")).exists() for pair in data.FILES.values() for n in pair)


needs_mnist = pytest.mark.skipif(not have_mnist(), reason="MNIST IDX files not found (set CTXNET_DATA_DIR)")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def synthetic_digits(n, seed=0):
    """Blobby stroke images standing in for digits in fast tests."""
    r = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:28, 0:28]
    imgs = np.zeros((n, 28, 28), dtype=np.float32)
    labels = r.integers(0, 10, size=n)
    for i in range(n):
        for _ in range(3):
            cx, cy = r.uniform(8, 20, size=2)
            imgs[i] += np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / r.uniform(4, 12)).astype(np.float32)
    return np.clip(imgs, 0, 1), labels


@pytest.fixture(scope="session")
def small_ds():
    imgs, labels = synthetic_digits(300)
    return data.Dataset(imgs, labels, "train")


@pytest.fixture(scope="session")
def small_ae(small_ds):
    params, _ = ae_mod.train_autoencoder(small_ds, 2, 0)
    return params


@pytest.fixture(scope="session")
def init_bank():
    """A complete bank of untrained (seeded) context nets; cheap and deterministic."""
    return contexts.ContextBank([contexts.ContextNetParams.init(i, contexts.derived_seed(0, i)) for i in range(405)])
