"""Recognition head shared across contexts.

One detector (dense 32 -> 64 + relu) is applied to every context's code, each
channel keeps its maximum over the 405 contexts, and a dense 64 -> 10 softmax
layer reads the result. Upstream autoencoder and context nets stay frozen:
gradients stop at the context grid.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass

import numpy as np

from . import autoencoder as ae_mod
from . import contexts, geometry
from .data import Dataset, batches
from .errors import ContractError, DependencyError
from .optim import Adam
from .tensor import (DenseParams, Tensor, assert_finite, backward, cross_entropy, dense, global_max as _global_max,
                     no_grad, shared_dense, shared_dense_max, softmax)

log = logging.getLogger(__name__)

CHANNELS = 64
N_CLASSES = 10
PRECOMPUTE_LIMIT = 5000  # training sets up to this size get their grids cached in memory


class ClassifierParams:
    def __init__(self, detector: DenseParams, head: DenseParams):
        if detector.n_out != head.n_in:
            raise ValueError("detector channels and head inputs disagree")
        self.detector = detector
        self.head = head

    @classmethod
    def init(cls, seed: int, channels: int = CHANNELS, dtype=np.float32):
        rng = np.random.default_rng([seed, 2])
        return cls(DenseParams.init(ae_mod.CODE_SIZE, channels, rng, dtype),
                   DenseParams.init(channels, N_CLASSES, rng, dtype))

    def parameters(self):
        return self.detector.parameters() + self.head.parameters()

    def arrays(self) -> dict:
        return {"detector.weights": self.detector.weights.data, "detector.bias": self.detector.bias.data,
                "head.weights": self.head.weights.data, "head.bias": self.head.bias.data}

    @classmethod
    def from_arrays(cls, arrays: dict):
        return cls(DenseParams(arrays["detector.weights"], arrays["detector.bias"]),
                   DenseParams(arrays["head.weights"], arrays["head.bias"]))


@dataclass
class Prediction:
    probs: np.ndarray  # (10,)
    winning_contexts: np.ndarray  # (64,) context index per detector channel
    label: int


@dataclass
class Pipeline:
    ae: ae_mod.AutoencoderParams
    bank: contexts.ContextBank
    clf: ClassifierParams

    def check(self):
        for name in ("ae", "bank", "clf"):
            if getattr(self, name) is None:
                raise DependencyError(f"pipeline is missing its {name} stage")


def context_features(grid, p: ClassifierParams) -> np.ndarray:
    """relu(W @ grid[i] + b) for every context row, one shared (W, b)."""
    with no_grad():
        return shared_dense(Tensor(np.asarray(grid)), p.detector).data


def global_max(features):
    """Per-channel max over contexts and the (lowest) winning context index."""
    with no_grad():
        vals, arg = _global_max(Tensor(np.asarray(features)))
    return vals.data, arg


def _head(grid: Tensor, p: ClassifierParams):
    pooled, arg = shared_dense_max(grid, p.detector)
    return softmax(dense(pooled, p.head)), arg


def predict_grids(grids, p: ClassifierParams):
    """Class probabilities (N, 10) and winning contexts (N, 64) for context grids (N, 405, 32)."""
    with no_grad():
        probs, arg = _head(Tensor(np.asarray(grids)), p)
    return probs.data, arg


def image_grids(images, ae, bank) -> np.ndarray:
    return contexts.build_context_grid(ae_mod.encode(images, ae), bank)


def predict(images, pipeline: Pipeline, chunk: int = 500):
    pipeline.check()
    probs, wins = [], []
    for i in range(0, len(images), chunk):
        pr, w = predict_grids(image_grids(images[i:i + chunk], pipeline.ae, pipeline.bank), pipeline.clf)
        probs.append(pr)
        wins.append(w)
    return np.concatenate(probs), np.concatenate(wins)


def classify(img, ae, bank, p: ClassifierParams) -> Prediction:
    for name, part in (("autoencoder", ae), ("context bank", bank), ("classifier", p)):
        if part is None:
            raise DependencyError(f"classify needs a trained {name}")
    probs, arg = predict_grids(image_grids(np.asarray(img)[None], ae, bank), p)
    return Prediction(probs[0], arg[0], int(np.argmax(probs[0])))


@dataclass
class EvalResult:
    accuracy: float
    confusion: np.ndarray  # (10, 10), rows = true label, cols = predicted
    n: int

    def report(self) -> str:
        lines = [f"accuracy: {self.accuracy:.4f}", f"items: {self.n}", "confusion (rows=true, cols=predicted):"]
        lines.append("     " + " ".join(f"{c:5d}" for c in range(N_CLASSES)))
        for r in range(N_CLASSES):
            lines.append(f"{r:3d}: " + " ".join(f"{v:5d}" for v in self.confusion[r]))
        return "\n".join(lines) + "\n"


def score(predicted, labels) -> EvalResult:
    predicted = np.asarray(predicted)
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ContractError("cannot evaluate on an empty dataset")
    conf = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(conf, (labels, predicted), 1)
    correct = int(np.trace(conf))
    return EvalResult(correct / len(labels), conf, len(labels))


def evaluate(ds: Dataset, pipeline: Pipeline) -> EvalResult:
    if len(ds) == 0:
        raise ContractError("cannot evaluate on an empty dataset")
    probs, _ = predict(ds.images, pipeline)
    return score(probs.argmax(axis=1), ds.labels)


def checksum(arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


def upstream_checksum(ae, bank) -> str:
    arrays = list(ae.arrays().values())
    for net in bank.nets:
        arrays.extend(net.arrays().values())
    return checksum(arrays)


def train_classifier(ds: Dataset, ae, bank, epochs: int, seed: int, *, batch_size: int = 64, lr: float = 1e-3,
                     augment: bool = False, spec=geometry.DEFAULT_GRID, on_epoch=None) -> ClassifierParams:
    """Cross-entropy training of the detector and head on frozen upstream stages.

    ``on_epoch(epoch, mean_loss, train_accuracy, params)`` runs after each epoch;
    the accuracy is measured on the batches as they were trained.
    """
    if ae is None or bank is None:
        raise DependencyError("classifier training needs a trained autoencoder and context bank")
    if len(ds) == 0:
        raise ContractError("cannot train the classifier on an empty dataset")
    before = upstream_checksum(ae, bank)
    p = ClassifierParams.init(seed)
    opt = Adam(p.parameters(), lr=lr)
    onehot = np.eye(N_CLASSES, dtype=np.float32)
    cached = None
    if not augment and len(ds) <= PRECOMPUTE_LIMIT:
        cached = image_grids(ds.images, ae, bank)
    for epoch in range(epochs):
        aug_rng = np.random.default_rng([seed, 3, epoch])
        total, correct, count = 0.0, 0, 0
        for idx in batches(len(ds), batch_size, seed, epoch):
            if cached is not None:
                grid = cached[idx]
            else:
                imgs = ds.images[idx]
                if augment:
                    imgs = geometry.augment_batch(imgs, aug_rng, spec)
                grid = image_grids(imgs, ae, bank)
            labels = ds.labels[idx]
            opt.zero_grad()
            probs, _ = _head(Tensor(grid), p)
            loss = cross_entropy(probs, Tensor(onehot[labels]))
            backward(loss)
            opt.step()
            total += float(loss.data) * len(idx)
            correct += int((probs.data.argmax(axis=1) == labels).sum())
            count += len(idx)
        assert_finite(p.parameters(), f"in classifier parameters after epoch {epoch + 1}")
        log.debug("classifier epoch %d: loss %.4f train acc %.4f", epoch + 1, total / count, correct / count)
        if on_epoch is not None:
            on_epoch(epoch + 1, total / count, correct / count, p)
    if upstream_checksum(ae, bank) != before:
        raise RuntimeError("frozen autoencoder/context-bank parameters changed during classifier training")
    return p
