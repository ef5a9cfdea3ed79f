"""Fully-connected bottleneck autoencoder: 784 -> 128 -> 32 -> 128 -> 784."""

from __future__ import annotations

import logging

import numpy as np

from . import geometry
from .data import Dataset, batches
from .errors import ContractError, ShapeError
from .optim import Adam
from .tensor import DenseParams, Tensor, assert_finite, backward, dense, mse, no_grad, relu, sigmoid

log = logging.getLogger(__name__)

IMAGE_SIZE = 28 * 28
HIDDEN = 128
CODE_SIZE = 32


class AutoencoderParams:
    LAYERS = ("enc1", "enc2", "dec1", "dec2")

    def __init__(self, enc1: DenseParams, enc2: DenseParams, dec1: DenseParams, dec2: DenseParams):
        self.enc1, self.enc2, self.dec1, self.dec2 = enc1, enc2, dec1, dec2
        if enc2.n_out != CODE_SIZE or dec1.n_in != CODE_SIZE:
            raise ValueError(f"code width must be {CODE_SIZE}")
        if enc1.n_out != enc2.n_in or dec1.n_out != dec2.n_in or enc1.n_in != dec2.n_out:
            raise ValueError("autoencoder layer chain is inconsistent")

    @classmethod
    def init(cls, seed: int, hidden: int = HIDDEN, dtype=np.float32):
        rng = np.random.default_rng([seed, 0])
        return cls(DenseParams.init(IMAGE_SIZE, hidden, rng, dtype),
                   DenseParams.init(hidden, CODE_SIZE, rng, dtype),
                   DenseParams.init(CODE_SIZE, hidden, rng, dtype),
                   DenseParams.init(hidden, IMAGE_SIZE, rng, dtype))

    def layers(self):
        return [self.enc1, self.enc2, self.dec1, self.dec2]

    def parameters(self):
        return [t for layer in self.layers() for t in layer.parameters()]

    def arrays(self) -> dict:
        out = {}
        for name, layer in zip(self.LAYERS, self.layers()):
            out[f"{name}.weights"] = layer.weights.data
            out[f"{name}.bias"] = layer.bias.data
        return out

    @classmethod
    def from_arrays(cls, arrays: dict):
        return cls(*(DenseParams(arrays[f"{n}.weights"], arrays[f"{n}.bias"]) for n in cls.LAYERS))


def _encode_t(x: Tensor, p: AutoencoderParams) -> Tensor:
    return dense(relu(dense(x, p.enc1)), p.enc2)


def _decode_t(c: Tensor, p: AutoencoderParams) -> Tensor:
    return sigmoid(dense(relu(dense(c, p.dec1)), p.dec2))


def encode(img, p: AutoencoderParams) -> np.ndarray:
    """Code(s) for one 28x28 image or a stack (N, 28, 28)."""
    img = np.asarray(img)
    single = img.ndim == 2
    if img.shape[-2:] != (28, 28) or img.ndim not in (2, 3):
        raise ShapeError(f"expected a 28x28 image or an (N, 28, 28) stack, got shape {img.shape}")
    x = img.reshape(1 if single else len(img), IMAGE_SIZE).astype(p.enc1.weights.dtype, copy=False)
    with no_grad():
        c = _encode_t(Tensor(x), p).data
    return c[0] if single else c


def decode(code, p: AutoencoderParams) -> np.ndarray:
    """Image(s) in (0, 1) for one code (32,) or a stack (N, 32)."""
    code = np.asarray(code, dtype=p.dec1.weights.dtype)
    single = code.ndim == 1
    with no_grad():
        x = _decode_t(Tensor(code[None] if single else code), p).data
    x = x.reshape(-1, 28, 28)
    return x[0] if single else x


def encode_batched(images, p: AutoencoderParams, chunk: int = 4096) -> np.ndarray:
    return np.concatenate([encode(images[i:i + chunk], p) for i in range(0, len(images), chunk)] or
                          [np.zeros((0, CODE_SIZE), dtype=p.enc1.weights.dtype)])


def reconstruction_mse(images, p: AutoencoderParams, chunk: int = 4096) -> float:
    """Mean per-pixel squared error of decode(encode(x)) over a stack of images."""
    total, count = 0.0, 0
    for i in range(0, len(images), chunk):
        x = np.asarray(images[i:i + chunk])
        r = decode(encode(x, p), p)
        total += float(((r.astype(np.float64) - x) ** 2).sum())
        count += x.size
    return total / count


def train_autoencoder(ds: Dataset, epochs: int, seed: int, *, batch_size: int = 64, lr: float = 1e-3,
                      augment: bool = True, spec=geometry.DEFAULT_GRID, params: AutoencoderParams | None = None,
                      on_epoch=None):
    """Train on (augmented) images with a per-pixel MSE reconstruction loss.

    Returns ``(params, final_mse)`` where final_mse is the mean batch loss of the
    last epoch (None when ``epochs == 0``). ``on_epoch(epoch, mean_mse, params)``
    is called after every epoch.
    """
    if len(ds) == 0:
        raise ContractError("cannot train the autoencoder on an empty dataset")
    if epochs < 0:
        raise ContractError("epochs must be >= 0")
    p = params if params is not None else AutoencoderParams.init(seed)
    opt = Adam(p.parameters(), lr=lr)
    images = ds.images
    final = None
    for epoch in range(epochs):
        aug_rng = np.random.default_rng([seed, 1, epoch])
        total, count = 0.0, 0
        for idx in batches(len(ds), batch_size, seed, epoch):
            x = images[idx]
            if augment:
                x = geometry.augment_batch(x, aug_rng, spec)
            x = x.reshape(len(idx), IMAGE_SIZE).astype(np.float32, copy=False)
            opt.zero_grad()
            loss = mse(_decode_t(_encode_t(Tensor(x), p), p), Tensor(x))
            backward(loss)
            opt.step()
            total += float(loss.data) * len(idx)
            count += len(idx)
        final = total / count
        assert_finite(p.parameters(), f"in autoencoder parameters after epoch {epoch + 1}")
        log.debug("autoencoder epoch %d: mse %.5f", epoch + 1, final)
        if on_epoch is not None:
            on_epoch(epoch + 1, final, p)
    return p, final
