"""The bank of 405 context nets.

Each net (32 -> 64 relu -> 32 linear) learns to map the code of an image to
the code of the same image warped by its context's transform. Nets are
independent: each gets its own seed (``seed ^ index``) and touches no shared
mutable state, so the bank is the same whatever order or parallelism is used.
"""

from __future__ import annotations

import logging
import multiprocessing
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor

import numpy as np

from . import autoencoder as ae_mod
from . import geometry
from .data import Dataset, batches
from .errors import ContractError, ContextTrainingError, DependencyError
from .optim import Adam
from .tensor import DenseParams, Tensor, assert_finite, backward, dense, mse, no_grad, relu

log = logging.getLogger(__name__)

HIDDEN = 64


class ContextNetParams:
    def __init__(self, index: int, hidden: DenseParams, out: DenseParams):
        if not 0 <= index < geometry.N_CONTEXTS:
            raise ValueError(f"context index {index} outside 0..{geometry.N_CONTEXTS - 1}")
        self.index = index
        self.hidden = hidden
        self.out = out

    @classmethod
    def init(cls, index: int, seed: int, hidden: int = HIDDEN, dtype=np.float32):
        rng = np.random.default_rng(seed)
        code = ae_mod.CODE_SIZE
        return cls(index, DenseParams.init(code, hidden, rng, dtype), DenseParams.init(hidden, code, rng, dtype))

    def parameters(self):
        return self.hidden.parameters() + self.out.parameters()

    def arrays(self) -> dict:
        return {"hidden.weights": self.hidden.weights.data, "hidden.bias": self.hidden.bias.data,
                "out.weights": self.out.weights.data, "out.bias": self.out.bias.data}

    @classmethod
    def from_arrays(cls, index: int, arrays: dict):
        return cls(index, DenseParams(arrays["hidden.weights"], arrays["hidden.bias"]),
                   DenseParams(arrays["out.weights"], arrays["out.bias"]))


class ContextBank:
    """405 context nets indexed like :func:`geometry.context_grid`."""

    def __init__(self, nets, spec=geometry.DEFAULT_GRID):
        nets = list(nets)
        if sorted(n.index for n in nets) != list(range(geometry.N_CONTEXTS)):
            missing = sorted(set(range(geometry.N_CONTEXTS)) - {n.index for n in nets})
            raise DependencyError(f"context bank is incomplete; missing indices {missing[:10]}"
                                  f"{' ...' if len(missing) > 10 else ''}")
        self.nets = sorted(nets, key=lambda n: n.index)
        self.spec = spec

    def __len__(self):
        return len(self.nets)

    def __getitem__(self, i) -> ContextNetParams:
        return self.nets[i]


def derived_seed(seed: int, index: int) -> int:
    return seed ^ index


def _forward_t(c: Tensor, net: ContextNetParams) -> Tensor:
    return dense(relu(dense(c, net.hidden)), net.out)


def apply_context(c, net: ContextNetParams) -> np.ndarray:
    """Map one code (32,) or a stack (N, 32) into the net's context."""
    c = np.asarray(c, dtype=net.hidden.weights.dtype)
    with no_grad():
        return _forward_t(Tensor(c), net).data


def context_pairs(images, ae, params: geometry.TransformParams, source_codes=None):
    """(code before, code after) the transform for every image."""
    src = ae_mod.encode_batched(images, ae) if source_codes is None else source_codes
    tgt = ae_mod.encode_batched(geometry.warp_batch(images, params), ae)
    return src, tgt


def _check_ae(ae):
    if ae is None:
        raise DependencyError("context training needs a trained autoencoder (none given)")


def train_context_net(ctx_index: int, ds: Dataset, ae, epochs: int, seed: int, *, batch_size: int = 64,
                      lr: float = 1e-3, spec=geometry.DEFAULT_GRID, source_codes=None,
                      seed_is_derived: bool = False) -> ContextNetParams:
    """Regress code(warp(x, context)) from code(x) with an MSE loss.

    ``seed`` is the run seed; the net's own seed is ``seed ^ ctx_index`` unless
    ``seed_is_derived`` says it was already combined. The autoencoder is only
    read, never updated.
    """
    _check_ae(ae)
    if not 0 <= ctx_index < geometry.N_CONTEXTS:
        raise ContractError(f"context index {ctx_index} outside 0..{geometry.N_CONTEXTS - 1}")
    if len(ds) == 0:
        raise ContractError("cannot train a context net on an empty dataset")
    net_seed = seed if seed_is_derived else derived_seed(seed, ctx_index)
    net = ContextNetParams.init(ctx_index, net_seed)
    if epochs == 0:
        return net
    params = geometry.context_grid(spec)[ctx_index]
    # the encoder is frozen and the warp is fixed, so pairs are the same every epoch
    src, tgt = context_pairs(ds.images, ae, params, source_codes)
    opt = Adam(net.parameters(), lr=lr)
    for epoch in range(epochs):
        for idx in batches(len(src), batch_size, net_seed, epoch):
            opt.zero_grad()
            loss = mse(_forward_t(Tensor(src[idx]), net), Tensor(tgt[idx]))
            backward(loss)
            opt.step()
    assert_finite(net.parameters(), f"in context net {ctx_index}")
    return net


# worker-side globals for the process pool (set once per worker by the initializer)
_WORK = {}


def _init_worker(images, labels, ae_arrays, source_codes, kwargs):
    _WORK["ds"] = Dataset(images, labels)
    _WORK["ae"] = ae_mod.AutoencoderParams.from_arrays(ae_arrays)
    _WORK["src"] = source_codes
    _WORK["kw"] = kwargs


def _train_one(index, seed, epochs):
    net = train_context_net(index, _WORK["ds"], _WORK["ae"], epochs, seed,
                            source_codes=_WORK["src"], **_WORK["kw"])
    return index, net.arrays()


def train_all_contexts(ds: Dataset, ae, epochs: int, seed: int, parallelism: int = 1, *,
                       indices=None, batch_size: int = 64, lr: float = 1e-3,
                       spec=geometry.DEFAULT_GRID, progress=None) -> list[ContextNetParams]:
    """Train every context net (or the given ``indices``) independently.

    Results do not depend on ``parallelism``. A failure is re-raised as
    :class:`ContextTrainingError` carrying the failing index.
    """
    _check_ae(ae)
    if len(ds) == 0:
        raise ContractError("cannot train context nets on an empty dataset")
    indices = list(range(geometry.N_CONTEXTS)) if indices is None else list(indices)
    src = ae_mod.encode_batched(ds.images, ae)
    kw = {"batch_size": batch_size, "lr": lr, "spec": spec}
    results = {}

    def done(index, arrays):
        results[index] = ContextNetParams.from_arrays(index, arrays)
        if progress is not None:
            progress(len(results), len(indices), index)

    if parallelism <= 1:
        _init_worker(ds.images, ds.labels, ae.arrays(), src, kw)
        try:
            for i in indices:
                try:
                    done(*_train_one(i, seed, epochs))
                except Exception as exc:
                    raise ContextTrainingError(i, f"{type(exc).__name__}: {exc}") from exc
        finally:
            _WORK.clear()
    else:
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(parallelism, mp_context=ctx, initializer=_init_worker,
                                 initargs=(ds.images, ds.labels, ae.arrays(), src, kw)) as pool:
            futures = {i: pool.submit(_train_one, i, seed, epochs) for i in indices}
            for i in indices:
                try:
                    done(*futures[i].result())
                except Exception as exc:
                    for f in futures.values():
                        f.cancel()
                    raise ContextTrainingError(i, f"{type(exc).__name__}: {exc}") from exc
    return [results[i] for i in indices]


def build_context_grid(c, bank: ContextBank, parallelism: int = 1) -> np.ndarray:
    """Codes of every context for one code (-> (405, 32)) or a stack (-> (N, 405, 32))."""
    if bank is None:
        raise DependencyError("no context bank given")
    if len(bank) != geometry.N_CONTEXTS:
        raise DependencyError(f"context bank holds {len(bank)} nets, expected {geometry.N_CONTEXTS}")
    c = np.asarray(c, dtype=bank[0].hidden.weights.dtype)
    single = c.ndim == 1
    codes = c[None] if single else c
    grid = np.empty((len(codes), len(bank), codes.shape[1]), dtype=codes.dtype)

    def fill(i):
        grid[:, i, :] = apply_context(codes, bank[i])

    if parallelism <= 1:
        for i in range(len(bank)):
            fill(i)
    else:
        with ThreadPoolExecutor(parallelism) as pool:
            list(pool.map(fill, range(len(bank))))
    return grid[0] if single else grid


def mosaic(grid, ae, cols: int = 27) -> np.ndarray:
    """Decode a (405, 32) context grid and tile it row-major: 15 x 27 tiles -> (420, 756)."""
    tiles = ae_mod.decode(np.asarray(grid), ae)
    n = len(tiles)
    rows = -(-n // cols)
    out = np.zeros((rows * 28, cols * 28), dtype=tiles.dtype)
    for i, tile in enumerate(tiles):
        r, c = divmod(i, cols)
        out[r * 28:(r + 1) * 28, c * 28:(c + 1) * 28] = tile
    return out


def pearson(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    a = a - a.mean()
    b = b - b.mean()
    denom = np.sqrt((a * a).sum() * (b * b).sum())
    return float((a * b).sum() / denom) if denom > 0 else 0.0


def generalization_probe(img, ae, bank: ContextBank):
    """Compare each context's decoded output against the warped and unwarped reconstruction.

    Returns (corr_warped, corr_unwarped) arrays of length 405 and the fraction
    of contexts where the warped reconstruction correlates more strongly.
    """
    code = ae_mod.encode(img, ae)
    recon = ae_mod.decode(code, ae)
    decoded = ae_mod.decode(build_context_grid(code, bank), ae)
    warped = geometry.warp_batch(np.broadcast_to(recon, (len(bank), 28, 28)), geometry.context_grid(bank.spec))
    corr_w = np.array([pearson(d, w) for d, w in zip(decoded, warped)])
    corr_u = np.array([pearson(d, recon) for d in decoded])
    return corr_w, corr_u, float(np.mean(corr_w > corr_u))
