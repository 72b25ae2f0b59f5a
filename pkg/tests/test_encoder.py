"""Encoder mechanics: sequence layouts, attention structure, padding
invariance, determinism, and dropout behavior."""

from __future__ import annotations

import numpy as np
import pytest

from cqalink import tokenizer as tok
from cqalink.corpus import Answer, CqaText, Mention, User
from cqalink.encoder import (
    Encoder,
    EncoderConfig,
    attention_mask,
    attention_pattern,
    aux_sequence_length,
    build_aux_tokens,
    build_pair_tokens,
    init_params,
    mention_context,
    pad_batch,
    param_shapes,
)


def _cfg(**overrides):
    base = dict(
        vocab_size=23,
        dim=8,
        heads=2,
        layers=2,
        ff_dim=16,
        max_positions=32,
        window=None,
        global_positions=(0,),
        dropout=0.0,
    )
    base.update(overrides)
    return EncoderConfig(**base)


# ----------------------------------------------------------- token layouts


def test_pair_layout_without_truncation():
    tokens, segs = build_pair_tokens(["a", "b"], ["x", "y", "z"], total_budget=16)
    assert tokens == [tok.CLS, "a", "b", tok.SEP, "x", "y", "z", tok.SEP]
    assert segs == [0, 0, 0, 0, 1, 1, 1, 1]
    assert len(tokens) == len(segs)


def test_pair_layout_cuts_longer_side_first():
    ctx = [f"c{i}" for i in range(20)]
    desc = [f"d{i}" for i in range(3)]
    tokens, _ = build_pair_tokens(ctx, desc, total_budget=16)
    assert len(tokens) <= 16
    # short description survives whole; the long context absorbs the cut
    assert [t for t in tokens if t.startswith("d")] == desc
    assert len([t for t in tokens if t.startswith("c")]) == 16 - 3 - len(desc)

    tokens, _ = build_pair_tokens(desc, ctx, total_budget=16)
    assert [t for t in tokens if t.startswith("d")] == desc
    assert len(tokens) <= 16


def test_pair_layout_reserves_half_budget_for_context():
    ctx = [f"c{i}" for i in range(30)]
    desc = [f"d{i}" for i in range(30)]
    tokens, segs = build_pair_tokens(ctx, desc, total_budget=20)
    assert len(tokens) == 20
    assert len([t for t in tokens if t.startswith("c")]) == 10
    assert len([t for t in tokens if t.startswith("d")]) == 7
    with pytest.raises(ValueError):
        build_pair_tokens(ctx, desc, total_budget=4)


def test_aux_layout_brackets_each_text():
    tokens, segs = build_aux_tokens(["d1", "d2"], [["t1"], ["t2", "t3"]], desc_limit=4, text_limit=2)
    assert tokens == [
        tok.S, tok.D, "d1", "d2", tok.SLASH_D, tok.SLASH_S,
        tok.Q, "t1", tok.SLASH_Q,
        tok.Q, "t2", "t3", tok.SLASH_Q,
        tok.SLASH_S,
    ]
    assert segs == [0] * 6 + [1] * 8
    assert len(tokens) <= aux_sequence_length(2, desc_limit=4, text_limit=2)


def test_aux_layout_truncates_per_text_and_description():
    tokens, _ = build_aux_tokens(
        [f"d{i}" for i in range(9)],
        [[f"t{i}" for i in range(9)]],
        desc_limit=3,
        text_limit=2,
    )
    assert [t for t in tokens if t.startswith("d")] == ["d0", "d1", "d2"]
    assert [t for t in tokens if t.startswith("t")] == ["t0", "t1"]
    assert len(tokens) == 12  # 5 frame tokens + 3 desc + (2 text + 2 brackets)
    assert len(tokens) <= aux_sequence_length(1, desc_limit=3, text_limit=2)


def test_aux_layout_with_no_texts():
    tokens, segs = build_aux_tokens(["d"], [], desc_limit=4, text_limit=2)
    assert tokens == [tok.S, tok.D, "d", tok.SLASH_D, tok.SLASH_S, tok.SLASH_S]
    assert segs == [0, 0, 0, 0, 0, 1]


def test_aux_sequence_length_is_worst_case():
    for k in range(4):
        texts = [[f"w{i}" for i in range(10)] for _ in range(k)]
        tokens, _ = build_aux_tokens(["d"] * 10, texts, desc_limit=6, text_limit=4)
        assert len(tokens) <= aux_sequence_length(k, desc_limit=6, text_limit=4)


# ---------------------------------------------------------- mention context


def _host():
    words = " ".join(f"w{i}" for i in range(30))
    q = f"{words} TARGET {words}"
    start = q.index("TARGET")
    m = Mention("TARGET", unit="q", start=start, end=start + 6, gold=None)
    return CqaText(id="z", question=q, answers=(), mentions=(m,)), m


def test_mention_context_centers_and_marks_the_surface():
    z, m = _host()
    ctx = mention_context(z, m, budget=11)
    parts = ctx.split()
    assert parts.count(tok.M) == 1 and parts.count(tok.SLASH_M) == 1
    i, j = parts.index(tok.M), parts.index(tok.SLASH_M)
    assert parts[i + 1 : j] == ["target"]
    assert len(parts) <= 11
    # roughly centered: both sides get a share of the leftover budget
    assert i >= 3 and len(parts) - j >= 3


def test_mention_context_at_text_edges():
    q = "TARGET then some trailing words here"
    m = Mention("TARGET", unit="q", start=0, end=6, gold=None)
    z = CqaText(id="z", question=q, answers=(), mentions=(m,))
    parts = mention_context(z, m, budget=8).split()
    assert parts[0] == tok.M
    assert len(parts) <= 8
    with pytest.raises(ValueError):
        mention_context(z, m, budget=7)


def test_mention_context_in_answer_unit():
    u = User("u")
    z = CqaText(
        id="z",
        question="irrelevant",
        answers=(Answer("the answer names TARGET here", u),),
        mentions=(Mention("TARGET", unit=0, start=17, end=23, gold=None),),
    )
    ctx = mention_context(z, z.mentions[0], budget=10)
    assert "target" in ctx.split()
    assert "irrelevant" not in ctx


# ------------------------------------------------------- attention structure


def test_attention_pattern_dense_and_windowed():
    assert attention_pattern(5, None).all()
    pat = attention_pattern(10, 4, global_positions=(0,))
    idx = np.arange(10)
    want = np.abs(idx[:, None] - idx[None, :]) <= 2
    want[0, :] = True
    want[:, 0] = True
    assert np.array_equal(pat, want)


def test_attention_mask_blocks_padding():
    pat = attention_pattern(6, None)
    mask = attention_mask(pat, np.array([6, 3]))
    assert mask.shape == (2, 6, 6)
    assert mask[0].all()
    assert not mask[1][:3, 3:].any()  # valid rows never see padding
    assert mask[1][:3, :3].all()
    # padded rows keep self-attention only, so their softmax stays defined
    assert np.array_equal(mask[1][3:, :], np.eye(6, dtype=bool)[3:])


def test_pad_batch_shapes():
    ids, segs, lengths = pad_batch(
        [np.array([5, 6, 7]), np.array([8])],
        [np.array([0, 0, 1]), np.array([0])],
        pad_id=0,
    )
    assert ids.tolist() == [[5, 6, 7], [8, 0, 0]]
    assert segs.tolist() == [[0, 0, 1], [0, 0, 0]]
    assert lengths.tolist() == [3, 1]


# ------------------------------------------------------------ forward pass


def test_forward_is_deterministic_and_seed_sensitive():
    cfg = _cfg()
    rng = np.random.default_rng(0)
    ids = rng.integers(0, cfg.vocab_size, size=(3, 12))
    segs = np.zeros_like(ids)
    lengths = np.array([12, 9, 5])
    e1 = Encoder(cfg, init_params(cfg, seed=1))
    e2 = Encoder(cfg, init_params(cfg, seed=1))
    e3 = Encoder(cfg, init_params(cfg, seed=2))
    s1 = e1.forward(ids, segs, lengths).scores
    assert np.array_equal(s1, e2.forward(ids, segs, lengths).scores)
    assert not np.array_equal(s1, e3.forward(ids, segs, lengths).scores)


def test_forward_ignores_padding_content():
    cfg = _cfg(window=4)
    enc = Encoder(cfg, init_params(cfg, seed=4))
    rng = np.random.default_rng(1)
    ids = rng.integers(1, cfg.vocab_size, size=(2, 10))
    segs = np.zeros_like(ids)
    lengths = np.array([10, 6])
    base = enc.forward(ids, segs, lengths).scores
    ids2 = ids.copy()
    ids2[1, 6:] = 13  # rewrite only padding positions
    again = enc.forward(ids2, segs, lengths).scores
    assert np.array_equal(base[1], again[1])
    # and extra pad columns leave every sequence's score unchanged
    wide = np.concatenate([ids, np.zeros((2, 5), dtype=ids.dtype)], axis=1)
    wide_segs = np.zeros_like(wide)
    widened = enc.forward(wide, wide_segs, lengths).scores
    np.testing.assert_allclose(widened, base, rtol=0, atol=1e-5)


def test_forward_rejects_overlong_sequences_and_missing_rng():
    cfg = _cfg(max_positions=8, dropout=0.5)
    enc = Encoder(cfg, init_params(cfg, seed=0))
    ids = np.zeros((1, 9), dtype=np.int64)
    with pytest.raises(ValueError):
        enc.forward(ids, np.zeros_like(ids), np.array([9]))
    ids = np.zeros((1, 4), dtype=np.int64)
    with pytest.raises(ValueError):
        enc.forward(ids, np.zeros_like(ids), np.array([4]), train=True)


def test_dropout_only_acts_in_training_mode():
    cfg = _cfg(dropout=0.3)
    enc = Encoder(cfg, init_params(cfg, seed=5))
    ids = np.arange(8).reshape(1, 8) % cfg.vocab_size
    segs = np.zeros_like(ids)
    lengths = np.array([8])
    eval_a = enc.forward(ids, segs, lengths).scores
    eval_b = enc.forward(ids, segs, lengths).scores
    assert np.array_equal(eval_a, eval_b)
    r1 = enc.forward(ids, segs, lengths, train=True, rng=np.random.default_rng(1)).scores
    r2 = enc.forward(ids, segs, lengths, train=True, rng=np.random.default_rng(2)).scores
    assert not np.array_equal(r1, r2)
    r1_again = enc.forward(ids, segs, lengths, train=True, rng=np.random.default_rng(1)).scores
    assert np.array_equal(r1, r1_again)


def test_encoder_validates_parameter_shapes():
    cfg = _cfg()
    params = init_params(cfg, seed=0)
    bad = dict(params)
    bad.pop("tok_emb")
    with pytest.raises(ValueError):
        Encoder(cfg, bad)
    bad = dict(params)
    bad["tok_emb"] = bad["tok_emb"][:, :4]
    with pytest.raises(ValueError):
        Encoder(cfg, bad)
    assert set(params) == set(param_shapes(cfg))
