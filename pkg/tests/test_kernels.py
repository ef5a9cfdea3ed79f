import subprocess
import sys

import numpy as np
import pytest

from ctxnet import kernels

compiled = pytest.mark.skipif("cython" not in kernels.available_backends(), reason="extension not built")


@compiled
@pytest.mark.parametrize("dtype,tol", [(np.float64, 1e-13), (np.float32, 1e-6)])
def test_warp_backends_agree(rng, dtype, tol):
    imgs = rng.random((6, 28, 28)).astype(dtype)
    inv = rng.normal(size=(6, 2, 3)) * [[0.3, 0.3, 3.0], [0.3, 0.3, 3.0]] + [[1, 0, 0], [0, 1, 0]]
    a = kernels.warp_bilinear(imgs, inv, "cython")
    b = kernels.warp_bilinear(imgs, inv, "python")
    assert a.dtype == b.dtype == dtype
    assert np.max(np.abs(a - b)) <= tol


@compiled
def test_shared_dense_max_backends_agree(rng):
    grid = rng.standard_normal((5, 405, 32)).astype(np.float32)
    w = rng.standard_normal((64, 32)).astype(np.float32)
    b = rng.standard_normal(64).astype(np.float32)
    v1, a1 = kernels.shared_dense_max(grid, w, b, "cython")
    v2, a2 = kernels.shared_dense_max(grid, w, b, "python")
    assert np.allclose(v1, v2, rtol=1e-5, atol=1e-5)
    assert np.mean(a1 == a2) > 0.99


@compiled
def test_shared_dense_max_ties_pick_lowest_index():
    grid = np.ones((1, 7, 3))
    v, a = kernels.shared_dense_max(grid, np.ones((2, 3)), np.zeros(2), "cython")
    assert np.array_equal(a, [[0, 0]]) and np.array_equal(v, [[3.0, 3.0]])


@compiled
def test_maxpool_backends_identical(rng):
    x = rng.standard_normal((3, 4, 10, 12)).astype(np.float32)
    x[0, 0, :2, :2] = 1.0  # a tie
    o1, p1 = kernels.maxpool2x2(x, "cython")
    o2, p2 = kernels.maxpool2x2(x, "python")
    assert np.array_equal(o1, o2) and np.array_equal(p1, p2)
    g = rng.standard_normal(o1.shape).astype(np.float32)
    assert np.array_equal(kernels.maxpool2x2_backward(g, p1, "cython"), kernels.maxpool2x2_backward(g, p2, "python"))


def test_forced_python_backend():
    code = "from ctxnet import kernels; print(kernels.BACKEND)"
    out = subprocess.run([sys.executable, "-c", code], env={"CTXNET_KERNELS": "python", "PATH": ""},
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
