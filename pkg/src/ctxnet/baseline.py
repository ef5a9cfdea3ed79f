"""Comparison CNN: conv(64, 5x5) -> pool -> conv(128, 5x5) -> pool -> fc 256 -> fc 10 softmax."""

from __future__ import annotations

import logging

import numpy as np

from . import geometry
from .classifier import EvalResult, N_CLASSES, score
from .data import Dataset, batches
from .errors import ContractError
from .optim import Adam
from .tensor import (ConvParams, DenseParams, Tensor, assert_finite, backward, conv2d, cross_entropy, dense,
                     flatten, maxpool2d, no_grad, relu, softmax)

log = logging.getLogger(__name__)


class BaselineParams:
    LAYERS = ("conv1", "conv2", "fc1", "fc2")

    def __init__(self, conv1: ConvParams, conv2: ConvParams, fc1: DenseParams, fc2: DenseParams):
        self.conv1, self.conv2, self.fc1, self.fc2 = conv1, conv2, fc1, fc2

    @classmethod
    def init(cls, seed: int, dtype=np.float32):
        rng = np.random.default_rng([seed, 4])
        return cls(ConvParams.init(1, 64, 5, 5, rng, dtype),
                   ConvParams.init(64, 128, 5, 5, rng, dtype),
                   DenseParams.init(128 * 4 * 4, 256, rng, dtype),
                   DenseParams.init(256, N_CLASSES, rng, dtype))

    def layers(self):
        return [self.conv1, self.conv2, self.fc1, self.fc2]

    def parameters(self):
        return [t for layer in self.layers() for t in layer.parameters()]

    def arrays(self) -> dict:
        out = {}
        for name, layer in zip(self.LAYERS, self.layers()):
            for pname, t in zip(("weights", "bias"), layer.parameters()):
                out[f"{name}.{pname}"] = t.data
        return out

    @classmethod
    def from_arrays(cls, a: dict):
        return cls(ConvParams(a["conv1.weights"], a["conv1.bias"]), ConvParams(a["conv2.weights"], a["conv2.bias"]),
                   DenseParams(a["fc1.weights"], a["fc1.bias"]), DenseParams(a["fc2.weights"], a["fc2.bias"]))


def _forward_t(x: Tensor, p: BaselineParams, trace: list | None = None) -> Tensor:
    steps = [
        lambda h: relu(conv2d(h, p.conv1)),
        maxpool2d,
        lambda h: relu(conv2d(h, p.conv2)),
        maxpool2d,
        flatten,
        lambda h: relu(dense(h, p.fc1)),
        lambda h: softmax(dense(h, p.fc2)),
    ]
    h = x
    if trace is not None:
        trace.append(h.shape[1:])
    for step in steps:
        h = step(h)
        if trace is not None:
            trace.append(h.shape[1:])
    return h


def baseline_forward(img, p: BaselineParams, trace: list | None = None) -> np.ndarray:
    """Class probabilities for one 28x28 image (-> (10,)) or a stack (-> (N, 10)).

    When ``trace`` is a list, the per-item shape after every stage is appended.
    """
    img = np.asarray(img)
    single = img.ndim == 2
    x = img.reshape(-1, 1, 28, 28).astype(p.conv1.kernels.dtype, copy=False)
    with no_grad():
        probs = _forward_t(Tensor(x), p, trace).data
    return probs[0] if single else probs


def evaluate_baseline(ds: Dataset, p: BaselineParams, chunk: int = 500) -> EvalResult:
    if len(ds) == 0:
        raise ContractError("cannot evaluate on an empty dataset")
    preds = np.concatenate([baseline_forward(ds.images[i:i + chunk], p).argmax(axis=1)
                            for i in range(0, len(ds), chunk)])
    return score(preds, ds.labels)


def train_baseline(ds: Dataset, epochs: int, augment: bool, seed: int, *, test_ds: Dataset | None = None,
                   batch_size: int = 64, lr: float = 1e-3, patience: int = 5, min_delta: float = 1e-4,
                   spec=geometry.DEFAULT_GRID, on_epoch=None):
    """Train with cross-entropy; stop early once the epoch loss stops improving.

    Returns ``(params, test_accuracy, info)``; test_accuracy is None without
    ``test_ds``. ``info`` records epochs run and whether early stopping fired.
    """
    if len(ds) == 0:
        raise ContractError("cannot train the baseline on an empty dataset")
    if epochs < 0:
        raise ContractError("epochs must be >= 0")
    p = BaselineParams.init(seed)
    opt = Adam(p.parameters(), lr=lr)
    onehot = np.eye(N_CLASSES, dtype=np.float32)
    best, stale, ran, stopped = np.inf, 0, 0, False
    for epoch in range(epochs):
        aug_rng = np.random.default_rng([seed, 5, epoch])
        total, count = 0.0, 0
        for idx in batches(len(ds), batch_size, seed, epoch):
            x = ds.images[idx]
            if augment:
                x = geometry.augment_batch(x, aug_rng, spec)
            x = x.reshape(len(idx), 1, 28, 28).astype(np.float32, copy=False)
            opt.zero_grad()
            loss = cross_entropy(_forward_t(Tensor(x), p), Tensor(onehot[ds.labels[idx]]))
            backward(loss)
            opt.step()
            total += float(loss.data) * len(idx)
            count += len(idx)
        ran = epoch + 1
        mean_loss = total / count
        assert_finite(p.parameters(), f"in baseline parameters after epoch {ran}")
        log.debug("baseline epoch %d: loss %.5f", ran, mean_loss)
        if on_epoch is not None:
            on_epoch(ran, mean_loss, p)
        if mean_loss < best - min_delta:
            best, stale = mean_loss, 0
        else:
            stale += 1
            if patience and stale >= patience:
                stopped = True
                break
    acc = evaluate_baseline(test_ds, p).accuracy if test_ds is not None else None
    return p, acc, {"epochs_run": ran, "early_stopped": stopped, "final_loss": None if not ran else mean_loss}
