import json
import struct

import numpy as np
import pytest

from ctxnet import store
from ctxnet.autoencoder import AutoencoderParams
from ctxnet.baseline import BaselineParams
from ctxnet.classifier import ClassifierParams
from ctxnet.errors import ContractError, DependencyError, FormatError, ShapeError


def same(a, b):
    return a.keys() == b.keys() and all(a[k].tobytes() == b[k].tobytes() for k in a)


def test_round_trips_are_bitwise(tmp_path, init_bank):
    ae = AutoencoderParams.init(1)
    store.save_checkpoint("autoencoder", ae, tmp_path / "ae.ckpt", {"seed": 1, "metrics": {"mse": 0.01}})
    back, meta = store.load_autoencoder(tmp_path / "ae.ckpt")
    assert same(back.arrays(), ae.arrays()) and meta["seed"] == 1 and meta["metrics"]["mse"] == 0.01

    clf = ClassifierParams.init(2)
    store.save_checkpoint("classifier", clf, tmp_path / "clf.ckpt")
    assert same(store.load_classifier(tmp_path / "clf.ckpt")[0].arrays(), clf.arrays())

    base = BaselineParams.init(3)
    store.save_checkpoint("baseline", base, tmp_path / "b.ckpt")
    assert same(store.load_baseline(tmp_path / "b.ckpt")[0].arrays(), base.arrays())

    store.save_checkpoint("context-bank", init_bank, tmp_path / "ctx.ckpt")
    bank, meta = store.load_bank(tmp_path / "ctx.ckpt")
    assert len(bank) == 405 and bank.spec == init_bank.spec
    assert all(same(a.arrays(), b.arrays()) for a, b in zip(bank.nets, init_bank.nets))
    assert meta["arrays"][0] == {"name": "ctx000.hidden.weights", "shape": [64, 32], "index": 0}


def test_header_layout(tmp_path):
    store.save_checkpoint("classifier", ClassifierParams.init(0), tmp_path / "c.ckpt")
    buf = (tmp_path / "c.ckpt").read_bytes()
    magic, version, n = struct.unpack_from("<4sII", buf)
    assert magic == b"CTXN" and version == 1
    meta = json.loads(buf[12:12 + n])
    assert meta["section"] == "classifier"
    assert len(buf) - 12 - n == 4 * (32 * 64 + 64 + 64 * 10 + 10)


def test_corruptions(tmp_path):
    path = tmp_path / "c.ckpt"
    store.save_checkpoint("classifier", ClassifierParams.init(0), path)
    good = path.read_bytes()

    path.write_bytes(b"XXXX" + good[4:])
    with pytest.raises(FormatError, match="magic"):
        store.load_classifier(path)

    path.write_bytes(good[:4] + struct.pack("<I", 2) + good[8:])
    with pytest.raises(FormatError, match="version"):
        store.load_classifier(path)

    n = struct.unpack_from("<I", good, 8)[0]
    meta = json.loads(good[12:12 + n])
    meta["arrays"][0]["shape"] = [32, 65]
    blob = json.dumps(meta).encode()
    path.write_bytes(good[:8] + struct.pack("<I", len(blob)) + blob + good[12 + n:])
    with pytest.raises(ShapeError):
        store.load_classifier(path)

    path.write_bytes(good[:-4])
    with pytest.raises(ShapeError):
        store.load_classifier(path)

    path.write_bytes(good)
    with pytest.raises(FormatError, match="section"):
        store.load_autoencoder(path)


def test_missing_checkpoint_names_section(tmp_path):
    with pytest.raises(DependencyError, match="autoencoder"):
        store.load_autoencoder(tmp_path / "nope.ckpt")


def test_pgm_bytes(tmp_path):
    img = np.array([[0.0, 0.5, 1.0], [0.2, 0.998, 0.001]])
    store.write_raster(img, tmp_path / "x.pgm")
    buf = (tmp_path / "x.pgm").read_bytes()
    assert buf.startswith(b"P5\n3 2\n255\n")
    assert list(buf[len(b"P5\n3 2\n255\n"):]) == [0, 128, 255, 51, 254, 0]
    assert np.array_equal(store.read_raster(tmp_path / "x.pgm"), store.to_bytes(img))
    with pytest.raises(ContractError):
        store.write_raster(np.array([[1.2]]), tmp_path / "y.pgm")
    with pytest.raises(ContractError):
        store.write_raster(np.zeros(4), tmp_path / "y.pgm")


def test_csv(tmp_path):
    store.write_csv(tmp_path / "c.csv", ["epoch", "loss", "acc"], [(1, 0.5, None), (2, 0.25, 0.9)])
    assert (tmp_path / "c.csv").read_text().splitlines() == ["epoch,loss,acc", "1,0.5,", "2,0.25,0.9"]


def test_config_precedence(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("# comment\nseed = 4\nlr=0.01\naugment = yes\nbatch-size = 32\n\nepochs = 9\n")
    values = store.read_config_file(f)
    assert values == {"seed": 4, "lr": 0.01, "augment": True, "batch_size": 32, "epochs": 9}
    cfg = store.resolve_config(values, {"seed": 7, "epochs": None}, {"epochs": 50, "train_size": 1000})
    assert (cfg.seed, cfg.epochs, cfg.train_size, cfg.lr) == (7, 9, 1000, 0.01)
    assert cfg.path_for("ae") == store.Path("runs/default/ae.ckpt")


def test_config_errors(tmp_path):
    f = tmp_path / "bad.cfg"
    f.write_text("colour = blue\n")
    with pytest.raises(ContractError, match="unknown"):
        store.read_config_file(f)
    f.write_text("seed = x\n")
    with pytest.raises(ContractError):
        store.read_config_file(f)
    with pytest.raises(ContractError):
        store.RunConfig(batch_size=0)
    with pytest.raises(ContractError):
        store.RunConfig(grid_angles="1,2")
