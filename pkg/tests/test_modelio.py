import json
import struct
import zlib

import numpy as np
import pytest

from szadapt.adaptation import AdaptationConfig, train_adaptation
from szadapt.errors import CorruptModelError
from szadapt.features import FeatureMatrix
from szadapt.gbtree import GbtConfig, WeightedDataset, fit_gbt
from szadapt.modelio import MAGIC, load_model, model_bytes, save_model


@pytest.fixture(scope="module")
def adapt_model():
    rng = np.random.default_rng(0)
    mats = [FeatureMatrix(s, rng.standard_normal((80, 5)) + k, np.zeros(80))
            for k, s in enumerate(["A", "B"])]
    cfg = AdaptationConfig(n_subjects=2, latent_dim=6, hidden_dim=10, disc_hidden=(7, 5),
                           epochs=2, batch_size=16)
    return train_adaptation(mats, cfg)


@pytest.fixture(scope="module")
def gbt_model():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((60, 3))
    y = (X[:, 0] > 0).astype(int)
    return fit_gbt(WeightedDataset(X, y, rng.uniform(0.1, 1, 60)), GbtConfig(n_trees=7))


def test_adaptation_round_trip(tmp_path, adapt_model):
    save_model(tmp_path / "m.szad", adapt_model)
    back = load_model(tmp_path / "m.szad")
    nets = lambda m: m.encoders + m.decoders + [m.discriminator]  # noqa: E731
    for a, b in zip(nets(adapt_model), nets(back)):
        assert all(np.array_equal(p, q) for p, q in zip(a.params(), b.params()))
        assert a.activations == b.activations
    for a, b in zip(adapt_model.normalizers, back.normalizers):
        assert np.array_equal(a.mean, b.mean) and np.array_equal(a.std, b.std)
    assert back.config == adapt_model.config
    assert back.history == adapt_model.history
    assert back.subjects == adapt_model.subjects
    assert model_bytes(back) == model_bytes(adapt_model)


def test_gbt_round_trip(tmp_path, gbt_model):
    save_model(tmp_path / "g.szad", gbt_model)
    back = load_model(tmp_path / "g.szad")
    assert back.base_score == gbt_model.base_score
    assert back.train_loss == gbt_model.train_loss
    for a, b in zip(gbt_model.trees, back.trees):
        assert np.array_equal(a.as_array(), b.as_array())


def test_truncated_file(tmp_path, gbt_model):
    data = model_bytes(gbt_model)
    (tmp_path / "t.szad").write_bytes(data[:-10])
    with pytest.raises(CorruptModelError, match="CRC"):
        load_model(tmp_path / "t.szad")


def test_flipped_byte(tmp_path, gbt_model):
    data = bytearray(model_bytes(gbt_model))
    data[-20] ^= 0xFF
    (tmp_path / "f.szad").write_bytes(bytes(data))
    with pytest.raises(CorruptModelError, match="CRC"):
        load_model(tmp_path / "f.szad")


def test_bad_magic(tmp_path, gbt_model):
    data = b"XXXXX" + model_bytes(gbt_model)[5:]
    (tmp_path / "x.szad").write_bytes(data)
    with pytest.raises(CorruptModelError, match="magic"):
        load_model(tmp_path / "x.szad")


def test_version_mismatch(tmp_path):
    head = json.dumps({"format_version": 99, "kind": "gbt", "meta": {}, "blocks": []}).encode()
    payload = MAGIC + struct.pack("<I", len(head)) + head
    (tmp_path / "v.szad").write_bytes(payload + struct.pack("<I", zlib.crc32(payload)))
    with pytest.raises(CorruptModelError, match="version"):
        load_model(tmp_path / "v.szad")
