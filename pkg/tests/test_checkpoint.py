"""Checkpoint container format: framing, checksums, and model round trips."""

from __future__ import annotations

import hashlib
import struct

import numpy as np
import pytest

from cqalink.checkpoint import (
    MAGIC,
    VERSION,
    CheckpointError,
    load_checkpoint,
    save_checkpoint,
    vocab_sidecar,
)
from cqalink.ranker import (
    FeatureMask,
    Model,
    ModelConfig,
    build_instances,
    build_model,
    predict_instances,
    vocabulary_texts,
)
from cqalink.synth import synth_separable
from cqalink.tokenizer import Tokenizer


def _tensors():
    rng = np.random.default_rng(0)
    return {
        "emb": rng.normal(size=(7, 3)).astype(np.float32),
        "w": rng.normal(size=(3,)).astype(np.float32),
        "scalar": np.float32(2.5).reshape(()),
    }


def test_round_trip_exact(tmp_path):
    path = tmp_path / "model.ckpt"
    tensors = _tensors()
    save_checkpoint(path, {"kind": "demo", "note": 7}, tensors)
    header, loaded = load_checkpoint(path)
    assert header == {"kind": "demo", "note": 7}  # manifest stripped on load
    assert list(loaded) == list(tensors)  # dict order preserved
    for name, arr in tensors.items():
        assert loaded[name].dtype == np.float32
        np.testing.assert_array_equal(loaded[name], arr)


def test_float64_inputs_are_stored_as_f4(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, {}, {"w": np.array([1.0, 2.0], dtype=np.float64)})
    _, loaded = load_checkpoint(path)
    assert loaded["w"].dtype == np.float32


def _rehash(payload: bytes) -> bytes:
    return payload + hashlib.sha256(payload).digest()


def test_corruption_detection(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, {"kind": "demo"}, _tensors())
    good = path.read_bytes()

    flipped = bytearray(good)
    flipped[len(good) // 2] ^= 0xFF
    path.write_bytes(bytes(flipped))
    with pytest.raises(CheckpointError, match="checksum"):
        load_checkpoint(path)

    path.write_bytes(good[: len(good) - 10])
    with pytest.raises(CheckpointError, match="checksum"):
        load_checkpoint(path)

    path.write_bytes(good[:20])
    with pytest.raises(CheckpointError, match="too short"):
        load_checkpoint(path)


def test_bad_magic_and_version(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, {}, _tensors())
    payload = path.read_bytes()[:-32]

    path.write_bytes(_rehash(b"NOTCKPT\x00" + payload[len(MAGIC) :]))
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)

    bumped = payload[: len(MAGIC)] + struct.pack("<I", VERSION + 1) + payload[len(MAGIC) + 4 :]
    path.write_bytes(_rehash(bumped))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(path)


def test_trailing_bytes_rejected(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, {}, _tensors())
    payload = path.read_bytes()[:-32]
    path.write_bytes(_rehash(payload + b"\x00\x00\x00\x00"))
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(path)


def test_vocab_sidecar_path(tmp_path):
    assert vocab_sidecar(tmp_path / "m.ckpt") == tmp_path / "m.ckpt.vocab.json"


MC = ModelConfig(
    vocab_size=400,
    dim=16,
    heads=2,
    layers=1,
    ff_dim=32,
    window=8,
    pair_budget=16,
    context_budget=8,
    desc_limit=4,
    text_limit=3,
    k=2,
    max_k=3,
    n_max=4,
)


def test_model_round_trip_predicts_identically(tmp_path):
    texts, index = synth_separable(8, seed=0)
    tk = Tokenizer.build(vocabulary_texts(texts, index), vocab_size=MC.vocab_size)
    model = build_model(tk, MC, seed=1)
    path = tmp_path / "model.ckpt"
    model.save(path)
    assert vocab_sidecar(path).exists()

    loaded = Model.load(path)
    assert loaded.config == model.config
    assert loaded.tokenizer.vocab_size == model.tokenizer.vocab_size
    for name, arr in model.parameters().items():
        np.testing.assert_array_equal(loaded.parameters()[name], arr)

    insts = build_instances(texts, index, tk, MC)
    mask = FeatureMask.full().as_array()
    p1, s1 = predict_instances(model, insts, mask)
    p2, s2 = predict_instances(loaded, insts, mask)
    assert p1 == p2
    for fa, fb in zip(s1.features, s2.features):
        np.testing.assert_array_equal(fa, fb)


def test_model_load_rejects_foreign_checkpoint(tmp_path):
    path = tmp_path / "other.ckpt"
    save_checkpoint(path, {"kind": "something-else"}, _tensors())
    with pytest.raises(CheckpointError, match="not a model"):
        Model.load(path)


def test_model_load_catches_vocab_mismatch(tmp_path):
    texts, index = synth_separable(8, seed=0)
    tk = Tokenizer.build(vocabulary_texts(texts, index), vocab_size=MC.vocab_size)
    model = build_model(tk, MC, seed=1)
    path = tmp_path / "model.ckpt"
    model.save(path)
    # swap in a sidecar built over a different vocabulary
    small = Tokenizer.build(["tiny corpus only"], vocab_size=32)
    small.save(vocab_sidecar(path))
    with pytest.raises(CheckpointError, match="vocabulary"):
        Model.load(path)
