"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise the numpy versions
in ``_fallback`` take over. Set ``CTXNET_KERNELS=python`` to force the
fallback (used by the benchmark and the backend-equivalence tests).
"""

import os

import numpy as np

from . import _fallback

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_BACKENDS = {"python": _fallback}
if _compiled is not None:
    _BACKENDS["cython"] = _compiled


def available_backends():
    return sorted(_BACKENDS)


def _default_backend():
    forced = os.environ.get("CTXNET_KERNELS", "").strip().lower()
    if forced:
        if forced not in _BACKENDS:
            raise ImportError(f"CTXNET_KERNELS={forced!r} but available backends are {available_backends()}")
        return forced
    return "cython" if "cython" in _BACKENDS else "python"


BACKEND = _default_backend()


def get_backend(name=None):
    return _BACKENDS[name or BACKEND]


def warp_bilinear(images, inv, backend=None):
    """Warp a stack of images (N, H, W) with per-image inverse maps (N, 2, 3)."""
    images = np.ascontiguousarray(images)
    if images.dtype not in (np.float32, np.float64):
        images = images.astype(np.float64)
    inv = np.ascontiguousarray(inv, dtype=np.float64)
    out = np.empty_like(images)
    get_backend(backend).warp_bilinear(images, inv, out)
    return out


def shared_dense_max(grid, weights, bias, backend=None):
    """Per-channel max over contexts of ``relu(grid @ weights.T + bias)``.

    grid is (N, contexts, in), weights (out, in). Returns values (N, out) and
    the winning context index (N, out), lowest index on ties.
    """
    dtype = np.result_type(grid, weights, bias)
    grid = np.ascontiguousarray(grid, dtype=dtype)
    wt = np.ascontiguousarray(np.asarray(weights, dtype=dtype).T)
    bias = np.ascontiguousarray(bias, dtype=dtype)
    n, _, _ = grid.shape
    out = np.empty((n, wt.shape[1]), dtype=dtype)
    arg = np.empty((n, wt.shape[1]), dtype=np.int64)
    get_backend(backend).shared_dense_max(grid, wt, bias, out, arg)
    return out, arg


def maxpool2x2(x, backend=None):
    x = np.ascontiguousarray(x)
    n, c, h, w = x.shape
    out = np.empty((n, c, h // 2, w // 2), dtype=x.dtype)
    pos = np.empty((n, c, h // 2, w // 2), dtype=np.int8)
    get_backend(backend).maxpool2x2(x, out, pos)
    return out, pos


def maxpool2x2_backward(grad_out, pos, backend=None):
    grad_out = np.ascontiguousarray(grad_out)
    n, c, ho, wo = grad_out.shape
    grad_in = np.zeros((n, c, 2 * ho, 2 * wo), dtype=grad_out.dtype)
    get_backend(backend).maxpool2x2_backward(grad_out, np.ascontiguousarray(pos), grad_in)
    return grad_in
