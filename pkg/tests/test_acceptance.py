"""Acceptance gate: ten numbered checks, one verdict line each.

Criteria 1-6 and 9 are direct property checks with stated tolerances and
runtime caps.  Criteria 7 and 8 train real models on the synthetic
aux-signal corpus (25 runs at 20 epochs, then 12 runs at 24 epochs) and
dominate the suite's runtime; expect roughly 25 minutes of CPU for the
two of them together.  Criterion 10 needs the released QuoraEL corpus
and skips when the CQALINK_QUORAEL environment variable is unset.
"""

from __future__ import annotations

import math
import os
import statistics
import time
from dataclasses import replace

import numpy as np
import pytest

import _report
from cqalink.aliases import build_alias_index
from cqalink.config import ModelConfig, TrainConfig
from cqalink.corpus import dataset_stats, load_dataset
from cqalink.encoder import (
    Encoder,
    EncoderConfig,
    attention_pattern,
    init_params,
    max_relative_error,
    numerical_gradient,
    param_shapes,
)
from cqalink.evaluation import evaluate_model, fold_seed, make_folds
from cqalink.ranker import (
    FeatureMask,
    build_model,
    normalize,
    predict_index,
    predict_instances,
    train,
    train_fusion,
    vocabulary_texts,
)
from cqalink.features import build_instances
from cqalink.similarity import jaro_winkler, levenshtein_ratio, ratcliff_obershelp
from cqalink.synth import SynthConfig, synth_dataset, synth_separable
from cqalink.tokenizer import Tokenizer


def _verdict(num: int, ok: bool, name: str, detail: str) -> None:
    line = _report.record(num, "PASS" if ok else "FAIL", name, detail)
    assert ok, line


# Training protocol shared by criteria 7 and 8: one fixed fold of the
# synthetic corpus, a small model whose shapes do not depend on k (max_k
# pads the aux sequence), and a schedule that holds the fusion weights
# at their uniform start for the first 30% of epochs so the encoders
# learn before the combiner can zero them out.
_MC = ModelConfig(
    vocab_size=2000,
    dim=32,
    heads=4,
    layers=2,
    ff_dim=64,
    window=64,
    pair_budget=18,
    context_budget=10,
    desc_limit=5,
    text_limit=3,
    k=3,
    max_k=5,
    n_max=4,
)


@pytest.fixture(scope="module")
def aux_corpus():
    texts, index = synth_dataset(SynthConfig(seed=0))
    fold = make_folds(texts, seed=0)[0]
    return texts, index, fold


def _train_and_test(fold, index, mask: str, seed: int, epochs: int, k: int = 3) -> float:
    mc = replace(_MC, k=k)
    tc = TrainConfig(
        seed=fold_seed(seed, 0),
        lr=1e-2,
        epochs=epochs,
        batch_texts=8,
        mask=mask,
        fusion_freeze_frac=0.3,
        feature_dropout=0.1,
    )
    model, _ = train(fold.train, fold.val, index, mc, tc)
    arr = FeatureMask.from_string(mask).as_array()
    return evaluate_model(model, fold.test, index, arr, with_recall=False).accuracy


def test_criterion_01_prior_normalization():
    t0 = time.perf_counter()
    pages = [
        "The New Deal was led by [[Franklin D. Roosevelt|Roosevelt]] in 1933.",
        "Later, [[Franklin D. Roosevelt|Roosevelt]] won again. "
        "Critics compared him with [[Theodore Roosevelt|Roosevelt]].",
        "A biography of [[Franklin D. Roosevelt|Roosevelt]] appeared.",
    ]
    index = build_alias_index(pages)
    entries = index.candidates_for("Roosevelt")
    got = {e.entity: (e.count, e.prior) for e in entries}
    toy_ok = got == {
        "Franklin D. Roosevelt": (3, 0.75),
        "Theodore Roosevelt": (1, 0.25),
    }

    rng = np.random.default_rng(1)
    targets = [f"Topic {i}" for i in range(40)]
    surfaces = [f"name{j}" for j in range(12)]
    sample = []
    for _ in range(100):
        n = int(rng.integers(5, 20))
        anchors = [
            f"[[{targets[rng.integers(len(targets))]}|{surfaces[rng.integers(len(surfaces))]}]]"
            for _ in range(n)
        ]
        sample.append("filler " + " and ".join(anchors) + " end.")
    big = build_alias_index(sample)
    worst = max(
        abs(sum(e.prior for e in big.candidates_for(s)) - 1.0) for s in big.surfaces
    )
    elapsed = time.perf_counter() - t0

    ok = toy_ok and worst <= 1e-9 and elapsed < 1.0
    _verdict(
        1,
        ok,
        "prior normalization",
        f"toy priors {sorted(got.values(), reverse=True)} (want 0.75/0.25), "
        f"max |sum-1| {worst:.2e} over {len(big.surfaces)} surfaces "
        f"(tol 1e-9), {elapsed:.2f}s (cap 1s)",
    )


def test_criterion_02_similarity_oracles():
    t0 = time.perf_counter()
    jw = jaro_winkler("MARTHA", "MARHTA")
    lev = levenshtein_ratio("kitten", "sitting")
    jw_ok = abs(jw - 0.9611) <= 1e-3
    lev_ok = abs(lev - 4.0 / 7.0) <= 1e-9

    rng = np.random.default_rng(20260814)
    alphabet = np.array(list("abcdefghijklmnopqrstuvwxyzABC 0123456789-'aeu"))
    sims = (jaro_winkler, levenshtein_ratio, ratcliff_obershelp)
    checked = 0
    for _ in range(10_000):
        a = "".join(rng.choice(alphabet, size=int(rng.integers(0, 16))))
        if rng.random() < 0.2:
            b = a
        else:
            b = "".join(rng.choice(alphabet, size=int(rng.integers(0, 16))))
        for fn in sims:
            s_ab = fn(a, b)
            assert s_ab == fn(b, a), (fn.__name__, a, b)
            assert 0.0 <= s_ab <= 1.0, (fn.__name__, a, b, s_ab)
            assert fn(a, a) == 1.0, (fn.__name__, a)
        checked += 1
    elapsed = time.perf_counter() - t0

    ok = jw_ok and lev_ok and checked == 10_000 and elapsed < 10.0
    _verdict(
        2,
        ok,
        "string-similarity oracles",
        f"jw(MARTHA,MARHTA)={jw:.6f} (want 0.9611 +/- 1e-3), "
        f"lev_ratio(kitten,sitting)={lev:.9f} (want 4/7 +/- 1e-9), "
        f"{checked} symmetry/identity/range cases, {elapsed:.1f}s (cap 10s)",
    )


def test_criterion_03_gradient_checks():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    results = {}

    for label, window in (("pair", None), ("aux", 4)):
        cfg = EncoderConfig(
            vocab_size=11,
            dim=8,
            heads=2,
            layers=1,
            ff_dim=16,
            max_positions=10,
            window=window,
            global_positions=(0,),
            dropout=0.0,
        )
        n_params = sum(int(np.prod(s)) for s in param_shapes(cfg).values())
        assert n_params <= 5000, f"{label} config too large: {n_params} params"
        enc = Encoder(cfg, init_params(cfg, seed=3, dtype=np.float64))
        B, T = 2, 9
        n_segs = enc.params["seg_emb"].shape[0]
        ids = rng.integers(0, cfg.vocab_size, size=(B, T))
        segs = rng.integers(0, n_segs, size=(B, T))
        lengths = np.array([T, T - 3])
        coef = rng.standard_normal(B)

        def loss_of(params, cfg=cfg, ids=ids, segs=segs, lengths=lengths, coef=coef):
            res = Encoder(cfg, params).forward(ids, segs, lengths)
            return float(res.scores @ coef)

        res = enc.forward(ids, segs, lengths, keep_tape=True)
        analytic = enc.backward(res.tape, coef.astype(np.float64))
        numeric = numerical_gradient(loss_of, enc.params, h=1e-5)
        results[label] = max_relative_error(analytic, numeric)

    feats = [rng.standard_normal((4, 5)) for _ in range(6)]
    golds = [int(rng.integers(0, 4)) for _ in range(6)]
    mask = np.array([True, True, True, False, True])
    w = rng.standard_normal(5)
    b = rng.standard_normal(1)

    def fusion_loss(params):
        loss = 0.0
        for f, g in zip(feats, golds):
            scores = (f * mask) @ params["w"] + params["b"][0]
            probs = normalize(scores)
            loss += -math.log(probs[g])
        return loss / len(feats)

    dw = np.zeros(5)
    db = 0.0
    for f, g in zip(feats, golds):
        scores = (f * mask) @ w + b[0]
        probs = normalize(scores)
        dscore = probs.copy()
        dscore[g] -= 1.0
        dscore /= len(feats)
        dw += dscore @ (f * mask)
        db += dscore.sum()
    numeric = numerical_gradient(fusion_loss, {"w": w, "b": b}, h=1e-5)
    results["fusion"] = max_relative_error(
        {"w": dw, "b": np.asarray([db])}, numeric
    )
    elapsed = time.perf_counter() - t0

    worst = max(results.values())
    ok = worst < 1e-3 and elapsed < 60.0
    _verdict(
        3,
        ok,
        "gradient checks",
        "max rel err "
        + " ".join(f"{k}={v:.2e}" for k, v in results.items())
        + f" (tol 1e-3, fp64, h=1e-5), {elapsed:.1f}s (cap 60s)",
    )


def test_criterion_04_attention_mask_correctness():
    rng = np.random.default_rng(11)

    # the configured full-scale window: 64 tokens means +/-32 positions
    pat = attention_pattern(80, 64, (0,))
    idx = np.arange(80)
    want = np.abs(idx[:, None] - idx[None, :]) <= 32
    want[0, :] = True
    want[:, 0] = True
    pattern_ok = bool(np.array_equal(pat, want))

    rows_ok = True
    zeros_ok = True
    for window in (4, 6, 64):
        cfg = EncoderConfig(
            vocab_size=17,
            dim=8,
            heads=2,
            layers=2,
            ff_dim=16,
            max_positions=24,
            window=window,
            global_positions=(0,),
            dropout=0.1,
        )
        enc = Encoder(cfg, init_params(cfg, seed=2, dtype=np.float64))
        B, T = 3, 21
        ids = rng.integers(0, cfg.vocab_size, size=(B, T))
        segs = rng.integers(0, enc.params["seg_emb"].shape[0], size=(B, T))
        lengths = np.array([T, 9, 14])
        res = enc.forward(ids, segs, lengths, collect_attention=True)
        pat = attention_pattern(T, window, (0,))
        for att in res.attentions:  # (B, heads, T, T)
            for b in range(B):
                L = int(lengths[b])
                allowed = pat.copy()
                allowed[:, L:] = False
                live = att[b][:, :L, :]
                if np.any(live[:, ~allowed[:L, :]] != 0.0):
                    zeros_ok = False
                sums = live.sum(axis=-1)
                if np.max(np.abs(sums - 1.0)) > 1e-6:
                    rows_ok = False

    ok = pattern_ok and zeros_ok and rows_ok
    _verdict(
        4,
        ok,
        "attention-mask correctness",
        f"64-token pattern exact: {pattern_ok}, out-of-window/padded weights "
        f"exactly 0: {zeros_ok}, unmasked rows sum to 1 +/- 1e-6: {rows_ok} "
        "(randomized inputs, 3 window sizes, 2 layers)",
    )


def test_criterion_05_softmax_argmax_invariance():
    rng = np.random.default_rng(5)
    sum_ok = True
    shift_ok = True
    perm_ok = True
    for _ in range(500):
        n = int(rng.integers(1, 12))
        scores = rng.standard_normal(n) * float(rng.uniform(0.1, 30.0))
        probs = normalize(scores)
        if abs(float(probs.sum()) - 1.0) > 1e-9:
            sum_ok = False
        c = float(rng.uniform(-100.0, 100.0))
        if predict_index(scores) != predict_index(scores + c):
            shift_ok = False
        if not np.allclose(probs, normalize(scores + c), atol=1e-12):
            shift_ok = False
        scores = scores + rng.uniform(0.0, 1e-6, size=n)  # break exact ties
        perm = rng.permutation(n)
        if predict_index(scores[perm]) != int(np.argmax(perm == predict_index(scores))):
            perm_ok = False

    tie_ok = predict_index(np.array([1.0, 3.0, 3.0])) == 1
    none_ok = predict_index(np.array([])) is None

    ok = sum_ok and shift_ok and perm_ok and tie_ok and none_ok
    _verdict(
        5,
        ok,
        "softmax/argmax invariance",
        f"prob sums 1 +/- 1e-9: {sum_ok}, constant-shift invariance: {shift_ok}, "
        f"permutation equivariance: {perm_ok}, first-index tie rule: {tie_ok}, "
        f"empty -> None: {none_ok} (500 randomized cases)",
    )


def test_criterion_06_fusion_trainability():
    texts, index = synth_separable(40, seed=0)
    mc = ModelConfig(
        vocab_size=500,
        dim=16,
        heads=2,
        layers=1,
        ff_dim=32,
        window=16,
        pair_budget=16,
        context_budget=8,
        desc_limit=4,
        text_limit=3,
        k=2,
        max_k=2,
        n_max=4,
    )
    tk = Tokenizer.build(vocabulary_texts(texts, index), mc.vocab_size)
    model = build_model(tk, mc, seed=0)  # encoders stay at their random init
    instances = build_instances(texts, index, tk, mc)
    mask = FeatureMask.full().as_array()
    _, result = predict_instances(model, instances, mask)
    golds = [inst.gold_index for inst in instances]
    assert all(g is not None for g in golds)

    _, losses, accuracies = train_fusion(result.features, golds, mask, lr=0.05, steps=200, seed=0)
    first_hit = next((i for i, a in enumerate(accuracies) if a == 1.0), None)
    decreasing = all(losses[i + 1] < losses[i] for i in range(9))

    ok = first_hit is not None and first_hit < 200 and decreasing
    _verdict(
        6,
        ok,
        "fusion trainability",
        f"{len(instances)} separable instances, frozen encoders: 100% train "
        f"accuracy at step {first_hit} (cap 200), loss strictly decreasing "
        f"over first 10 steps: {decreasing} (loss {losses[0]:.4f} -> {losses[9]:.4f})",
    )


def test_criterion_07_aux_features_lift_accuracy(aux_corpus):
    texts, index, fold = aux_corpus
    n_mentions = sum(len(z.mentions) for z in texts)
    assert n_mentions >= 1000, f"corpus too small: {n_mentions} mentions"

    t0 = time.perf_counter()
    seeds = (0, 1, 2, 3, 4)
    masks = ("base", "base+parallel", "base+topic", "base+user", "full")
    acc = {m: [_train_and_test(fold, index, m, s, epochs=20) for s in seeds] for m in masks}
    elapsed = time.perf_counter() - t0

    med = {m: statistics.median(v) for m, v in acc.items()}
    margin = med["full"] - med["base"]
    single_ok = all(
        med[m] > med["base"] for m in ("base+parallel", "base+topic", "base+user")
    )
    ok = margin >= 0.10 and single_ok and elapsed < 900.0
    _verdict(
        7,
        ok,
        "aux features lift accuracy",
        f"{n_mentions} mentions, {len(seeds)} seeds; median test accuracy "
        + " ".join(f"{m}={med[m]:.3f}" for m in masks)
        + f"; full-base margin {margin:+.3f} (need >= +0.10), every single-aux "
        f"mask above base: {single_ok}; {elapsed:.0f}s (cap 900s)",
    )


def test_criterion_08_k_sweep_plateau(aux_corpus):
    _, index, fold = aux_corpus
    seeds = (0, 1, 2)
    ks = (0, 3, 4, 5)
    acc = {
        k: [_train_and_test(fold, index, "full", s, epochs=24, k=k) for s in seeds]
        for k in ks
    }
    mean = {k: statistics.fmean(v) for k, v in acc.items()}
    spread = max(mean[k] for k in (3, 4, 5)) - min(mean[k] for k in (3, 4, 5))

    ok = mean[3] >= mean[0] and spread < 0.02
    _verdict(
        8,
        ok,
        "k-sweep plateau",
        "mean test accuracy "
        + " ".join(f"k={k}:{mean[k]:.3f}" for k in ks)
        + f"; k=3 >= k=0: {mean[3] >= mean[0]}, plateau spread over k in "
        f"{{3,4,5}} = {spread:.3f} (need < 0.02)",
    )


def test_criterion_09_fold_protocol(aux_corpus):
    texts, _, _ = aux_corpus
    stub = [replace(texts[0], id=f"t{i:03d}") for i in range(53)]
    ok = True
    notes = []
    for sample in (texts, stub):
        n = len(sample)
        folds = make_folds(sample, seed=0)
        again = make_folds(sample, seed=0)
        other = make_folds(sample, seed=1)
        ids = lambda fs: [[z.id for z in part] for f in fs for part in (f.train, f.val, f.test)]
        if len(folds) != 5 or ids(folds) != ids(again) or ids(folds) == ids(other):
            ok = False
        test_ids = [z.id for f in folds for z in f.test]
        if sorted(test_ids) != sorted(z.id for z in sample):
            ok = False  # test sets must partition the corpus
        for f in folds:
            sizes = (len(f.train), len(f.val), len(f.test))
            wants = (0.7 * n, 0.1 * n, 0.2 * n)
            if any(abs(got - want) > 1.0 for got, want in zip(sizes, wants)):
                ok = False
            if len(set(z.id for z in f.train + f.val + f.test)) != n:
                ok = False
        notes.append(f"n={n}: sizes {sizes} vs 70/10/20 of {n}")

    _verdict(
        9,
        ok,
        "fold protocol",
        "; ".join(notes) + " (+/- 1 text, 5 folds, deterministic under seed)",
    )


def test_criterion_10_corpus_statistics():
    path = os.environ.get("CQALINK_QUORAEL")
    if not path or not os.path.exists(path):
        line = _report.record(
            10,
            "SKIP",
            "corpus statistics",
            "CQALINK_QUORAEL not set or missing; place the released QuoraEL "
            "JSONL there to enable this check",
        )
        pytest.skip(line)
    stats = dataset_stats(load_dataset(path))
    got = (stats.n_texts, stats.n_answers, stats.n_mentions, stats.n_unique_tags)
    want = (504, 2192, 8030, 1165)
    _verdict(
        10,
        got == want,
        "corpus statistics",
        f"texts/answers/mentions/tags {got} (want {want}) from {path}",
    )
