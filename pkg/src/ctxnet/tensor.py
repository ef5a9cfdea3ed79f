"""Small reverse-mode autodiff engine over numpy arrays.

Every op records its parents and a function mapping the output gradient to
one gradient per parent. Nothing is recorded when no input requires a
gradient, so frozen sub-networks run as plain numpy.
"""

from __future__ import annotations

import contextlib
import math
import threading
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import kernels
from .errors import ContractError, ShapeError

CE_FLOOR = 1e-12

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording in this thread for the duration of the block."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (),
                 _backward: Callable | None = None, op: str = ""):
        data = np.asarray(data)
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float64)
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op or 'leaf'!r})"

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other, self.dtype)))

    def __rsub__(self, other):
        return add(_as_tensor(other, self.dtype), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __pow__(self, k):
        return power(self, k)

    def sum(self):
        return total(self)

    def mean(self):
        return mean(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype)
    return Tensor(arr)


def _make(data, parents: Sequence[Tensor], grad_fn: Callable, op: str) -> Tensor:
    if grad_enabled() and any(p.requires_grad for p in parents):
        return Tensor(data, True, tuple(parents), grad_fn, op)
    return Tensor(data, False, (), None, op)


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _topo_order(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf requiring grad."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


def zero_grad(params: Sequence[Tensor]) -> None:
    for p in params:
        p.grad = None


# elementwise / structural ---------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul")


def power(a: Tensor, k: float) -> Tensor:
    return _make(a.data ** k, (a,), lambda g: (g * k * a.data ** (k - 1),), f"pow{k}")


def total(a: Tensor) -> Tensor:
    return _make(a.data.sum(), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),), "sum")


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    return _make(a.data.mean(), (a,), lambda g: (np.full(a.shape, g / n, dtype=a.dtype),), "mean")


def reshape(a: Tensor, shape) -> Tensor:
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def flatten(a: Tensor) -> Tensor:
    """Flatten all but the leading (batch) axis."""
    return reshape(a, (a.shape[0], -1))


# parameters ------------------------------------------------------------------

def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype=np.float32):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class DenseParams:
    """Fully-connected layer: ``weights`` is (out, in), ``bias`` is (out,)."""

    def __init__(self, weights, bias):
        self.weights = weights if isinstance(weights, Tensor) else Tensor(weights, requires_grad=True)
        self.bias = bias if isinstance(bias, Tensor) else Tensor(bias, requires_grad=True)
        if self.weights.data.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(f"dense weights {self.weights.shape} and bias {self.bias.shape} disagree")

    @classmethod
    def init(cls, n_in: int, n_out: int, rng: np.random.Generator, dtype=np.float32):
        w = glorot_uniform(rng, (n_out, n_in), n_in, n_out, dtype)
        return cls(w, np.zeros(n_out, dtype=dtype))

    @property
    def n_in(self):
        return self.weights.shape[1]

    @property
    def n_out(self):
        return self.weights.shape[0]

    def parameters(self):
        return [self.weights, self.bias]


class ConvParams:
    """Convolution kernels (out, in, kh, kw) with a per-output-channel bias."""

    def __init__(self, kernels_, bias):
        self.kernels = kernels_ if isinstance(kernels_, Tensor) else Tensor(kernels_, requires_grad=True)
        self.bias = bias if isinstance(bias, Tensor) else Tensor(bias, requires_grad=True)
        if self.kernels.data.ndim != 4 or self.bias.shape != (self.kernels.shape[0],):
            raise ShapeError(f"conv kernels {self.kernels.shape} and bias {self.bias.shape} disagree")

    @classmethod
    def init(cls, c_in: int, c_out: int, kh: int, kw: int, rng: np.random.Generator, dtype=np.float32):
        k = glorot_uniform(rng, (c_out, c_in, kh, kw), c_in * kh * kw, c_out * kh * kw, dtype)
        return cls(k, np.zeros(c_out, dtype=dtype))

    def parameters(self):
        return [self.kernels, self.bias]


# layers ------------------------------------------------------------------------

def dense(x, p: DenseParams) -> Tensor:
    """``x @ W.T + b`` for a single vector (n,) or a batch (N, n)."""
    x = _as_tensor(x)
    if x.data.ndim not in (1, 2) or x.shape[-1] != p.n_in:
        raise ShapeError(f"dense input {x.shape} does not match weights {p.weights.shape}")
    w, b = p.weights, p.bias
    out = x.data @ w.data.T + b.data

    def grad_fn(g):
        gx = g @ w.data if x.requires_grad else None
        if x.data.ndim == 1:
            gw = np.outer(g, x.data)
            gb = g
        else:
            gw = g.T @ x.data
            gb = g.sum(axis=0)
        return gx, gw, gb

    return _make(out, (x, w, b), grad_fn, "dense")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0).astype(x.dtype, copy=False), (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    """Logistic function, kept strictly inside (0, 1) for the data dtype."""
    info = np.finfo(x.dtype)
    s = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    s = np.clip(s, info.tiny, 1.0 - info.epsneg).astype(x.dtype, copy=False)
    return _make(s, (x,), lambda g: (g * s * (1 - s),), "sigmoid")


def linear(x: Tensor) -> Tensor:
    return x


_ACTIVATIONS = {"relu": relu, "sigmoid": sigmoid, "linear": linear}


def activation(kind: str, x) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}; expected one of {sorted(_ACTIVATIONS)}") from None
    return fn(_as_tensor(x))


def softmax(x, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _make(s, (x,), grad_fn, "softmax")


def mse(pred, target) -> Tensor:
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse shapes differ: pred {pred.shape} vs target {target.shape}")
    diff = pred.data - target.data
    n = diff.size
    out = np.asarray((diff * diff).mean(), dtype=pred.dtype)

    def grad_fn(g):
        gp = g * (2.0 / n) * diff
        return gp.astype(pred.dtype, copy=False), -gp.astype(target.dtype, copy=False)

    return _make(out, (pred, target), grad_fn, "mse")


def cross_entropy(pred, target) -> Tensor:
    """Mean over the batch of ``-sum(target * log(max(pred, 1e-12)))``."""
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"cross_entropy shapes differ: pred {pred.shape} vs target {target.shape}")
    n = pred.shape[0] if pred.data.ndim == 2 else 1
    clamped = np.maximum(pred.data, CE_FLOOR)
    out = np.asarray(-(target.data * np.log(clamped)).sum() / n, dtype=pred.dtype)

    def grad_fn(g):
        gp = -g * target.data / clamped * (pred.data > CE_FLOOR) / n
        return gp.astype(pred.dtype, copy=False), None

    return _make(out, (pred, target), grad_fn, "cross_entropy")


_LOSSES = {"mse": mse, "cross_entropy": cross_entropy}


def loss(kind: str, pred, target) -> Tensor:
    try:
        fn = _LOSSES[kind]
    except KeyError:
        raise ValueError(f"unknown loss {kind!r}; expected one of {sorted(_LOSSES)}") from None
    return fn(pred, target)


def conv2d(x, p: ConvParams) -> Tensor:
    """Valid, stride-1 cross-correlation. Accepts (C, H, W) or (N, C, H, W)."""
    x = _as_tensor(x)
    single = x.data.ndim == 3
    xd = x.data[None] if single else x.data
    k = p.kernels.data
    n_out, c_in, kh, kw = k.shape
    if xd.ndim != 4 or xd.shape[1] != c_in:
        raise ShapeError(f"conv2d input {x.shape} does not match kernels {k.shape}")
    if kh > xd.shape[2] or kw > xd.shape[3]:
        raise ShapeError(f"conv2d kernel {k.shape} larger than input {x.shape}")
    win = sliding_window_view(xd, (kh, kw), axis=(2, 3))  # N, C, Ho, Wo, kh, kw
    out = np.tensordot(win, k, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    out = out + p.bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def grad_fn(g):
        g4 = g[None] if single else g
        gk = np.tensordot(g4, win, axes=([0, 2, 3], [0, 2, 3])) if p.kernels.requires_grad else None
        gb = g4.sum(axis=(0, 2, 3))
        gx = None
        if x.requires_grad:
            padded = np.pad(g4, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
            gwin = sliding_window_view(padded, (kh, kw), axis=(2, 3))
            gx = np.tensordot(gwin, k[:, :, ::-1, ::-1], axes=([1, 4, 5], [0, 2, 3])).transpose(0, 3, 1, 2)
            gx = np.ascontiguousarray(gx)
            if single:
                gx = gx[0]
        return gx, gk, gb

    return _make(out[0] if single else out, (x, p.kernels, p.bias), grad_fn, "conv2d")


def maxpool2d(x) -> Tensor:
    """2x2 window, stride 2. Gradient goes to the first maximal element."""
    x = _as_tensor(x)
    single = x.data.ndim == 3
    xd = x.data[None] if single else x.data
    if xd.ndim != 4 or xd.shape[2] % 2 or xd.shape[3] % 2:
        raise ShapeError(f"maxpool2d needs even spatial dims, got {x.shape}")
    out, pos = kernels.maxpool2x2(xd)

    def grad_fn(g):
        gi = kernels.maxpool2x2_backward(g[None] if single else g, pos)
        return (gi[0] if single else gi,)

    return _make(out[0] if single else out, (x,), grad_fn, "maxpool2d")


def shared_dense(grid, p: DenseParams) -> Tensor:
    """Apply one dense layer + relu to every context row: (N, C, in) -> (N, C, out).

    Uses einsum without BLAS so each row's result does not depend on where the
    row sits in the grid.
    """
    grid = _as_tensor(grid)
    if grid.shape[-1] != p.n_in:
        raise ShapeError(f"context grid {grid.shape} does not match detector {p.weights.shape}")
    w, b = p.weights, p.bias
    pre = np.einsum("...ck,jk->...cj", grid.data, w.data) + b.data
    mask = pre > 0
    out = np.where(mask, pre, 0).astype(pre.dtype, copy=False)

    def grad_fn(g):
        gm = g * mask
        gm2 = gm.reshape(-1, gm.shape[-1])
        gw = gm2.T @ grid.data.reshape(-1, grid.shape[-1])
        gb = gm2.sum(axis=0)
        gg = np.einsum("...cj,jk->...ck", gm, w.data) if grid.requires_grad else None
        return gg, gw, gb

    return _make(out, (grid, w, b), grad_fn, "shared_dense")


def global_max(features) -> tuple[Tensor, np.ndarray]:
    """Per-channel max over the context axis (-2). Returns (values, argmax indices)."""
    features = _as_tensor(features)
    f = features.data
    arg = np.argmax(f, axis=-2)
    vals = np.take_along_axis(f, arg[..., None, :], axis=-2)[..., 0, :]

    def grad_fn(g):
        gf = np.zeros_like(f)
        np.put_along_axis(gf, arg[..., None, :], g[..., None, :], axis=-2)
        return (gf,)

    return _make(vals, (features,), grad_fn, "global_max"), arg


def shared_dense_max(grid, p: DenseParams) -> tuple[Tensor, np.ndarray]:
    """Fused ``global_max(shared_dense(grid, p))`` for batched grids (N, C, in).

    Forward runs in the compiled kernel; gradients reach only the winning rows.
    """
    grid = _as_tensor(grid)
    if grid.data.ndim != 3 or grid.shape[-1] != p.n_in:
        raise ShapeError(f"context grid {grid.shape} does not match detector {p.weights.shape}")
    w, b = p.weights, p.bias
    vals, arg = kernels.shared_dense_max(grid.data, w.data, b.data)
    n_idx = np.arange(grid.shape[0])[:, None]
    winners = grid.data[n_idx, arg]  # N, out, in
    active = vals > 0

    def grad_fn(g):
        gm = (g * active).astype(vals.dtype, copy=False)
        gw = np.einsum("nj,njk->jk", gm, winners)
        gb = gm.sum(axis=0)
        gg = None
        if grid.requires_grad:
            gg = np.zeros_like(grid.data)
            contrib = gm[:, :, None] * w.data[None, :, :]
            np.add.at(gg, (np.broadcast_to(n_idx, arg.shape), arg), contrib)
        return gg, gw, gb

    return _make(vals, (grid, w, b), grad_fn, "shared_dense_max"), arg


def assert_finite(arrays, where: str = "") -> None:
    for a in arrays:
        data = a.data if isinstance(a, Tensor) else a
        if not np.all(np.isfinite(data)):
            raise FloatingPointError(f"non-finite values {where}".strip())
