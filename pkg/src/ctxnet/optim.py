"""Plain gradient descent and Adam over lists of numpy parameter arrays."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError


@dataclass
class OptimizerState:
    mode: str = "adam"  # "adam" or "sgd"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, mode="adam", lr=1e-3, **kw):
        state = cls(mode=mode, lr=lr, **kw)
        if mode == "adam":
            state.m = [np.zeros_like(p) for p in params]
            state.v = [np.zeros_like(p) for p in params]
        elif mode != "sgd":
            raise ValueError(f"unknown optimizer mode {mode!r}")
        return state


def optimizer_step(params, grads, state: OptimizerState):
    """Update ``params`` in place from ``grads``; returns (params, state).

    A ``None`` gradient is treated as zero.
    """
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameters but {len(grads)} gradients")
    grads = [np.zeros_like(p) if g is None else g for p, g in zip(params, grads)]
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ShapeError(f"parameter shape {p.shape} vs gradient shape {g.shape}")
    state.step += 1
    if state.mode == "sgd":
        for p, g in zip(params, grads):
            p -= (state.lr * g).astype(p.dtype, copy=False)
        return params, state

    if len(state.m) != len(params):
        raise ShapeError("optimizer state was built for a different parameter list")
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if m.shape != p.shape:
            raise ShapeError(f"moment shape {m.shape} vs parameter shape {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p -= update.astype(p.dtype, copy=False)
    return params, state


class Optimizer:
    """Binds an :class:`OptimizerState` to a list of trainable tensors."""

    def __init__(self, tensors, mode="adam", lr=1e-3, **kw):
        self.tensors = list(tensors)
        self.state = OptimizerState.for_params([t.data for t in self.tensors], mode=mode, lr=lr, **kw)

    def zero_grad(self):
        for t in self.tensors:
            t.grad = None

    def step(self):
        optimizer_step([t.data for t in self.tensors], [t.grad for t in self.tensors], self.state)


def Adam(tensors, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    return Optimizer(tensors, "adam", lr, beta1=beta1, beta2=beta2, eps=eps)


def SGD(tensors, lr=0.01):
    return Optimizer(tensors, "sgd", lr)
