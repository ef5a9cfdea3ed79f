"""One function per CLI subcommand. Each takes a resolved RunConfig and returns a metrics dict."""

from __future__ import annotations

import logging
import time
from pathlib import Path

import numpy as np

from . import autoencoder as ae_mod
from . import classifier as clf_mod
from . import baseline as base_mod
from . import contexts, geometry, store
from .data import load_mnist, take_prefix
from .errors import DependencyError

log = logging.getLogger(__name__)

STAGE_DEFAULTS = {
    "train-ae": {"epochs": 50, "train_size": 60000},
    "train-contexts": {"epochs": 20, "train_size": 60000},
    # raw images overfit the 1000-image set (about 92% test); augmented batches and a
    # larger step are the measured default, --no-augment restores raw training
    "train-classifier": {"epochs": 180, "train_size": 1000, "augment": True, "lr": 3e-3},
    "train-baseline": {"epochs": 50, "train_size": 1000},
}


def _train_split(cfg: store.RunConfig):
    ds = load_mnist("train", cfg.data_dir)
    return take_prefix(ds, cfg.train_size) if cfg.train_size is not None else ds


def _hyper(cfg: store.RunConfig, **extra):
    d = {"epochs": cfg.epochs, "batch_size": cfg.batch_size, "lr": cfg.lr, "train_size": cfg.train_size,
         "augment": cfg.augment}
    d.update(extra)
    return d


def load_stage(cfg: store.RunConfig, stage: str):
    """Load the checkpoint for 'ae', 'ctx', 'clf' or 'baseline'; DependencyError names what is missing."""
    path = cfg.path_for(stage)
    loaders = {"ae": store.load_autoencoder, "ctx": store.load_bank, "clf": store.load_classifier,
               "baseline": store.load_baseline}
    names = {"ae": "autoencoder", "ctx": "context-bank", "clf": "classifier", "baseline": "baseline"}
    if not path.exists():
        raise DependencyError(f"missing {names[stage]} checkpoint: {path}")
    return loaders[stage](path)[0]


def train_ae(cfg: store.RunConfig) -> dict:
    train = _train_split(cfg)
    test = load_mnist("test", cfg.data_dir)
    curve = []
    t0 = time.time()

    def on_epoch(epoch, mse, p):
        held = ae_mod.reconstruction_mse(test.images, p)
        curve.append((epoch, mse, held))
        log.info("ae epoch %d  train mse %.5f  test mse %.5f  (%.0fs)", epoch, mse, held, time.time() - t0)

    params, final = ae_mod.train_autoencoder(train, cfg.epochs, cfg.seed, batch_size=cfg.batch_size, lr=cfg.lr,
                                             spec=cfg.grid_spec(), on_epoch=on_epoch)
    test_mse = ae_mod.reconstruction_mse(test.images, params)
    metrics = {"final_train_mse": final, "test_mse": test_mse, "curve": curve, "seconds": time.time() - t0}
    out = Path(cfg.out)
    store.save_checkpoint("autoencoder", params, cfg.path_for("ae"),
                          {"seed": cfg.seed, "hyperparameters": _hyper(cfg, augment=True), "metrics": metrics,
                           "grid": cfg.grid_spec().to_dict()})
    store.write_csv(out / "ae_curve.csv", ["epoch", "train_loss", "test_mse"], curve)
    return metrics


def train_contexts(cfg: store.RunConfig) -> dict:
    ae = load_stage(cfg, "ae")
    train = _train_split(cfg)
    spec = cfg.grid_spec()
    t0 = time.time()

    def progress(done, total, index):
        if done % 45 == 0 or done == total:
            log.info("context nets trained: %d/%d (%.0fs)", done, total, time.time() - t0)

    nets = contexts.train_all_contexts(train, ae, cfg.epochs, cfg.seed, cfg.jobs, batch_size=cfg.batch_size,
                                       lr=cfg.lr, spec=spec, progress=progress)
    bank = contexts.ContextBank(nets, spec)
    test = load_mnist("test", cfg.data_dir)
    held = test.images[:2000]
    src = ae_mod.encode(held, ae)
    rel = []
    params = geometry.context_grid(spec)
    for i in (0, geometry.IDENTITY_INDEX, geometry.N_CONTEXTS - 1):
        _, tgt = contexts.context_pairs(held, ae, params[i], src)
        pred = contexts.apply_context(src, bank[i])
        rel.append((i, float(((pred - tgt) ** 2).mean() / tgt.var(axis=0).mean())))
    metrics = {"heldout_relative_mse": rel, "seconds": time.time() - t0}
    store.save_checkpoint("context-bank", bank, cfg.path_for("ctx"),
                          {"seed": cfg.seed, "hyperparameters": _hyper(cfg, jobs=cfg.jobs), "metrics": metrics})
    return metrics


def train_classifier(cfg: store.RunConfig) -> dict:
    ae = load_stage(cfg, "ae")
    bank = load_stage(cfg, "ctx")
    train = _train_split(cfg)
    test = load_mnist("test", cfg.data_dir)
    test_grids = None
    curve = []
    t0 = time.time()

    def test_accuracy(p):
        nonlocal test_grids
        if test_grids is None:
            test_grids = clf_mod.image_grids(test.images, ae, bank)
        probs = np.concatenate([clf_mod.predict_grids(test_grids[i:i + 1000], p)[0]
                                for i in range(0, len(test_grids), 1000)])
        return float((probs.argmax(axis=1) == test.labels).mean())

    def on_epoch(epoch, loss, train_acc, p):
        acc = test_accuracy(p) if epoch % cfg.eval_every == 0 or epoch == cfg.epochs else None
        curve.append((epoch, loss, train_acc, acc))
        log.info("classifier epoch %d  loss %.4f  train acc %.4f  test acc %s  (%.0fs)", epoch, loss, train_acc,
                 "-" if acc is None else f"{acc:.4f}", time.time() - t0)

    p = clf_mod.train_classifier(train, ae, bank, cfg.epochs, cfg.seed, batch_size=cfg.batch_size, lr=cfg.lr,
                                 augment=cfg.augment, spec=cfg.grid_spec(), on_epoch=on_epoch)
    result = clf_mod.evaluate(test, clf_mod.Pipeline(ae, bank, p))
    metrics = {"test_accuracy": result.accuracy, "curve": curve, "seconds": time.time() - t0}
    out = Path(cfg.out)
    store.save_checkpoint("classifier", p, cfg.path_for("clf"),
                          {"seed": cfg.seed, "hyperparameters": _hyper(cfg), "metrics": metrics})
    store.write_csv(out / "classifier_curve.csv", ["epoch", "train_loss", "train_accuracy", "test_accuracy"], curve)
    _write_report(out / "classifier_metrics.txt", "classifier", cfg, result)
    metrics["report"] = result.report()
    return metrics


def train_baseline(cfg: store.RunConfig) -> dict:
    train = _train_split(cfg)
    test = load_mnist("test", cfg.data_dir)
    curve = []
    t0 = time.time()

    def on_epoch(epoch, loss, p):
        curve.append((epoch, loss, None))
        log.info("baseline epoch %d  loss %.5f  (%.0fs)", epoch, loss, time.time() - t0)

    p, _, info = base_mod.train_baseline(train, cfg.epochs, cfg.augment, cfg.seed, batch_size=cfg.batch_size,
                                         lr=cfg.lr, spec=cfg.grid_spec(), on_epoch=on_epoch)
    result = base_mod.evaluate_baseline(test, p)
    if curve:
        curve[-1] = (curve[-1][0], curve[-1][1], result.accuracy)
    metrics = {"test_accuracy": result.accuracy, "curve": curve, "seconds": time.time() - t0, **info}
    out = Path(cfg.out)
    tag = "baseline_aug" if cfg.augment else "baseline"
    store.save_checkpoint("baseline", p, cfg.path_for("baseline") if cfg.baseline else out / f"{tag}.ckpt",
                          {"seed": cfg.seed, "hyperparameters": _hyper(cfg), "metrics": metrics})
    store.write_csv(out / f"{tag}_curve.csv", ["epoch", "train_loss", "test_accuracy"], curve)
    _write_report(out / f"{tag}_metrics.txt", tag, cfg, result,
                  extra=f"epochs run: {info['epochs_run']} (early stop: {info['early_stopped']})\n")
    metrics["report"] = result.report()
    return metrics


def evaluate(cfg: store.RunConfig) -> dict:
    pipe = clf_mod.Pipeline(load_stage(cfg, "ae"), load_stage(cfg, "ctx"), load_stage(cfg, "clf"))
    test = load_mnist("test", cfg.data_dir)
    result = clf_mod.evaluate(test, pipe)
    _write_report(Path(cfg.out) / "eval_metrics.txt", "eval", cfg, result)
    return {"test_accuracy": result.accuracy, "report": result.report()}


def visualize(cfg: store.RunConfig) -> dict:
    ae = load_stage(cfg, "ae")
    bank = load_stage(cfg, "ctx")
    test = load_mnist("test", cfg.data_dir)
    img = test.images[cfg.index]
    grid = contexts.build_context_grid(ae_mod.encode(img, ae), bank)
    out = Path(cfg.out)
    store.write_raster(img, out / f"digit_{cfg.index}.pgm")
    store.write_raster(contexts.mosaic(grid, ae), out / f"mosaic_{cfg.index}.pgm")
    return {"mosaic": str(out / f"mosaic_{cfg.index}.pgm"), "label": int(test.labels[cfg.index])}


def probe_triangle(cfg: store.RunConfig) -> dict:
    ae = load_stage(cfg, "ae")
    bank = load_stage(cfg, "ctx")
    tri = geometry.triangle_glyph()
    corr_w, corr_u, frac = contexts.generalization_probe(tri, ae, bank)
    out = Path(cfg.out)
    store.write_raster(tri, out / "triangle.pgm")
    store.write_raster(contexts.mosaic(contexts.build_context_grid(ae_mod.encode(tri, ae), bank), ae),
                       out / "triangle_mosaic.pgm")
    store.write_csv(out / "triangle_probe.csv", ["context", "corr_warped", "corr_unwarped"],
                    [(i, f"{w:.6f}", f"{u:.6f}") for i, (w, u) in enumerate(zip(corr_w, corr_u))])
    return {"fraction_warped_closer": frac, "mosaic": str(out / "triangle_mosaic.pgm")}


def _write_report(path: Path, stage: str, cfg: store.RunConfig, result, extra: str = "") -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    head = f"stage: {stage}\nseed: {cfg.seed}\nepochs: {cfg.epochs}\ntrain_size: {cfg.train_size}\n" \
           f"augment: {cfg.augment}\n"
    path.write_text(head + extra + result.report(), encoding="utf-8")


COMMANDS = {
    "train-ae": train_ae,
    "train-contexts": train_contexts,
    "train-classifier": train_classifier,
    "train-baseline": train_baseline,
    "eval": evaluate,
    "visualize": visualize,
    "probe-triangle": probe_triangle,
}
