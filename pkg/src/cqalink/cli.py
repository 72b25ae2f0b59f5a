"""Command-line surface binding all modules into reproducible workflows.

Exit codes: 0 success, 1 usage error, 2 data or validation error,
3 training divergence.  Every command prints a single effective-config
line before doing work; rerunning with those settings reproduces the run.

Heavy imports happen inside the command handlers so that --threads can
cap the BLAS pools through the environment before numpy is loaded.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

log = logging.getLogger(__name__)

_THREAD_ENV_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)

_MODEL_KEYS = (
    "vocab_size",
    "dim",
    "heads",
    "layers",
    "ff_dim",
    "window",
    "dropout",
    "pair_budget",
    "context_budget",
    "desc_limit",
    "text_limit",
    "k",
    "max_k",
    "n_max",
    "levenshtein_mode",
    "selection_chars",
    "chunk_rows",
)
_TRAIN_KEYS = (
    "seed",
    "lr",
    "epochs",
    "batch_texts",
    "warmup_frac",
    "weight_decay",
    "mask",
    "fusion_freeze_frac",
    "feature_dropout",
)


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _effective_config(cmd: str, parts: dict) -> None:
    rendered = " ".join(f"{k}={parts[k]}" for k in sorted(parts))
    print(f"effective-config: cmd={cmd} {rendered}")


def _config_parts(mc=None, tc=None, **extra) -> dict:
    parts = dict(extra)
    if mc is not None:
        parts.update(mc.to_dict())
    if tc is not None:
        parts.update(tc.to_dict())
    return parts


def _guard_output(path: str | None, force: bool) -> None:
    if path and Path(path).exists() and not force:
        raise DataError(f"refusing to overwrite {path} (pass --force)")


def _resolve_configs(args):
    """Config file first, then flags on top of it."""
    from .config import ModelConfig, TrainConfig, apply_overrides, parse_config_file

    overrides: dict[str, str] = {}
    if getattr(args, "config", None):
        overrides.update(parse_config_file(args.config))
    for key in _MODEL_KEYS + _TRAIN_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = str(value)
    mc, rest = apply_overrides(ModelConfig(), overrides)
    tc, rest = apply_overrides(TrainConfig(), rest)
    if rest:
        raise UsageError(f"unknown config keys: {', '.join(sorted(rest))}")
    return mc, tc


def _load_corpus(path: str):
    from .corpus import load_dataset_with_report

    texts, issues = load_dataset_with_report(path)
    fatal = [i for i in issues if i.fatal]
    if fatal:
        raise DataError(f"{path}: {fatal[0]}")
    for issue in issues:
        log.warning("%s", issue)
    if not texts:
        raise DataError(f"{path}: no CQA texts")
    return texts


def _load_index(path: str):
    from .aliases import load_index

    return load_index(path)


def _load_model(path: str):
    from .ranker import Model

    return Model.load(path)


def _mask(spec: str):
    from .ranker import FeatureMask

    return FeatureMask.from_string(spec)


# ---------------------------------------------------------------- commands


def _cmd_build_index(args) -> int:
    from .aliases import AliasIndexBuilder, save_index
    from .wikitext import description_text, iter_pages

    if not args.pages and not args.counts:
        raise UsageError("build-index needs --pages and/or --counts")
    _effective_config(
        "build-index",
        {"pages": args.pages, "counts": args.counts, "redirects": args.redirects,
         "out": args.out, "force": args.force},
    )
    _guard_output(args.out, args.force)
    builder = AliasIndexBuilder()
    descriptions: dict[str, str] = {}
    if args.pages:
        for title, text in iter_pages(args.pages):
            builder.add_page(text)
            descriptions[title] = description_text(text)
    if args.counts:
        builder.add_counts_tsv(args.counts)
    redirects: dict[str, str] = {}
    if args.redirects:
        with open(args.redirects, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                fields = line.split("\t")
                if len(fields) != 2:
                    raise DataError(f"{args.redirects}:{line_no}: expected 2 tab fields")
                redirects[fields[0]] = fields[1]
    index = builder.build(descriptions, redirects=redirects)
    save_index(index, args.out)
    print(f"index: {len(index)} surfaces, {len(index.entities)} entities -> {args.out}")
    return 0


def _cmd_candidates(args) -> int:
    if not args.surface and not args.data:
        raise UsageError("candidates needs --surface and/or --data")
    _effective_config(
        "candidates",
        {"index": args.index, "surface": args.surface, "data": args.data,
         "n_max": args.n_max},
    )
    index = _load_index(args.index)
    if args.surface:
        entries = index.candidates_for(args.surface)[: args.n_max]
        for entry in entries:
            desc = index.description(entry.entity).replace("\t", " ")[:80]
            print(f"{entry.entity}\t{entry.prior:.6f}\t{entry.count}\t{desc}")
        if not entries:
            print(f"no candidates for {args.surface!r}", file=sys.stderr)
    if args.data:
        from .candidates import candidate_recall

        texts = _load_corpus(args.data)
        recall = candidate_recall(texts, index, n_max=args.n_max)
        print(f"candidate-recall: {recall:.4f}")
    return 0


def _cmd_select(args) -> int:
    from .selection import SelectionConfig, select_useful_texts

    if args.text:
        pool = list(args.text)
    elif args.texts_file:
        with open(args.texts_file, encoding="utf-8") as fh:
            pool = [line.rstrip("\n") for line in fh if line.strip()]
    else:
        raise UsageError("select needs --text (repeatable) or --texts-file")
    cfg = SelectionConfig(max_chars=args.selection_chars or 512,
                          levenshtein_mode=args.levenshtein_mode or "max")
    _effective_config(
        "select",
        {"k": args.k, "n_texts": len(pool), "max_chars": cfg.max_chars,
         "levenshtein_mode": cfg.levenshtein_mode},
    )
    for rank, scored in enumerate(select_useful_texts(args.context, pool, args.k, cfg)):
        print(f"{rank}\t{scored.score:.6f}\t{scored.source_rank}\t{scored.text}")
    return 0


def _cmd_train(args) -> int:
    from .evaluation import evaluate_model, make_folds
    from .ranker import train

    mc, tc = _resolve_configs(args)
    _effective_config(
        "train",
        _config_parts(mc, tc, data=args.data, index=args.index, out=args.out,
                      fold=args.fold, force=args.force),
    )
    _guard_output(args.out, args.force)
    texts = _load_corpus(args.data)
    index = _load_index(args.index)
    folds = make_folds(texts, tc.seed)
    if not 0 <= args.fold < len(folds):
        raise UsageError(f"--fold must be in [0, {len(folds) - 1}]")
    fold = folds[args.fold]
    model, report = train(fold.train, fold.val, index, mc, tc)
    if args.out:
        model.save(args.out)
    for epoch, (loss, acc) in enumerate(zip(report.epoch_losses, report.val_accuracies)):
        print(f"epoch {epoch}: loss={loss:.4f} val-accuracy={acc:.4f}")
    print(f"best-epoch: {report.best_epoch} val-accuracy={report.best_val_accuracy:.4f}")
    test = evaluate_model(model, fold.test, index, _mask(tc.mask).as_array())
    print(f"test: {test.summary()}")
    if args.out:
        print(f"model -> {args.out}")
    return 0


def _cmd_link(args) -> int:
    from .corpus import QUESTION_UNIT
    from .pipeline import LinkRequest, link_corpus, link_mention

    _effective_config(
        "link",
        {"model": args.model, "index": args.index, "data": args.data,
         "mask": args.mask, "k": args.k, "text_id": args.text_id,
         "mention": args.mention, "out": args.out, "force": args.force},
    )
    _guard_output(args.out, args.force)
    model = _load_model(args.model)
    index = _load_index(args.index)
    texts = _load_corpus(args.data)
    if args.text_id is not None:
        matches = [z for z in texts if z.id == args.text_id]
        if not matches:
            raise DataError(f"no CQA text with id {args.text_id!r}")
        z = matches[0]
        mention_idxs = range(len(z.mentions)) if args.mention is None else [args.mention]
        for mi in mention_idxs:
            if not 0 <= mi < len(z.mentions):
                raise DataError(f"mention index {mi} out of range for {z.id}")
            req = LinkRequest(text=z, mention=z.mentions[mi], mask=args.mask, k=args.k)
            entity, diag = link_mention(req, index, model)
            if args.diagnostics:
                print(json.dumps(diag.to_dict(), indent=2, sort_keys=True))
            else:
                unit = "q" if z.mentions[mi].unit == QUESTION_UNIT else z.mentions[mi].unit
                print(f"{z.id}\t{mi}\t{unit}\t{z.mentions[mi].surface}\t{entity or '-'}")
        return 0
    results, report = link_corpus(texts, index, model, mask=args.mask, progress=args.progress)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            for r in results:
                fh.write(json.dumps({
                    "text_id": r.text_id,
                    "surface": r.mention.surface,
                    "start": r.mention.start,
                    "prediction": r.prediction,
                    "gold": r.mention.gold,
                    "error": r.error,
                }) + "\n")
        print(f"links -> {args.out}")
    print(report.summary())
    return 0


def _cmd_eval(args) -> int:
    from .evaluation import evaluate_model

    _effective_config(
        "eval",
        {"model": args.model, "index": args.index, "data": args.data, "mask": args.mask},
    )
    model = _load_model(args.model)
    index = _load_index(args.index)
    texts = _load_corpus(args.data)
    report = evaluate_model(model, texts, index, _mask(args.mask).as_array())
    print(report.summary())
    return 0


def _parse_folds(spec: str | None):
    if spec is None:
        return None
    try:
        return [int(f) for f in spec.split(",") if f != ""]
    except ValueError as e:
        raise UsageError(f"bad --folds value: {e}")


def _cmd_ablate(args) -> int:
    from .evaluation import ablation_tsv, run_ablation

    mc, tc = _resolve_configs(args)
    masks = [m.strip() for m in args.masks.split(",") if m.strip()]
    if not masks:
        raise UsageError("--masks must name at least one mask")
    for spec in masks:
        _mask(spec)
    folds = _parse_folds(args.folds)
    _effective_config(
        "ablate",
        _config_parts(mc, tc, data=args.data, index=args.index,
                      masks=args.masks, folds=args.folds, out=args.out,
                      force=args.force),
    )
    _guard_output(args.out, args.force)
    texts = _load_corpus(args.data)
    index = _load_index(args.index)
    rows = run_ablation(texts, index, mc, tc, masks, seed=tc.seed, folds=folds)
    table = ablation_tsv(rows)
    if args.out:
        Path(args.out).write_text(table, encoding="utf-8")
        print(f"ablation -> {args.out}")
    else:
        print(table, end="")
    return 0


def _cmd_sweep_k(args) -> int:
    from .evaluation import sweep_k, sweep_tsv

    mc, tc = _resolve_configs(args)
    try:
        ks = [int(k) for k in args.ks.split(",") if k != ""]
    except ValueError as e:
        raise UsageError(f"bad --ks value: {e}")
    if not ks:
        raise UsageError("--ks must name at least one k")
    folds = _parse_folds(args.folds)
    _effective_config(
        "sweep-k",
        _config_parts(mc, tc, data=args.data, index=args.index, ks=args.ks,
                      folds=args.folds, out=args.out, force=args.force),
    )
    _guard_output(args.out, args.force)
    texts = _load_corpus(args.data)
    index = _load_index(args.index)
    points = sweep_k(texts, index, mc, tc, ks, seed=tc.seed, folds=folds)
    table = sweep_tsv(points)
    if args.out:
        Path(args.out).write_text(table, encoding="utf-8")
        print(f"sweep -> {args.out}")
    else:
        print(table, end="")
    return 0


def _gradcheck_encoder(windowed: bool, seed: int) -> float:
    """Max relative error between analytic and central-difference gradients
    on a sub-5k-parameter encoder, fp64."""
    import numpy as np

    from .encoder import (
        Encoder,
        EncoderConfig,
        flatten_params,
        max_relative_error,
        numerical_gradient,
        param_order,
    )

    cfg = EncoderConfig(
        vocab_size=40, dim=8, heads=2, layers=1, ff_dim=16, max_positions=16,
        window=6 if windowed else None, dropout=0.0,
    )
    rng = np.random.default_rng(seed)
    enc = Encoder.init(cfg, seed=seed, dtype=np.float64)
    for name in enc.params:
        enc.params[name] = rng.normal(0.0, 0.2, enc.params[name].shape)
    ids = rng.integers(0, cfg.vocab_size, size=(3, 12))
    segs = rng.integers(0, 2, size=(3, 12))
    lengths = np.array([12, 9, 5])

    def loss(params: dict) -> float:
        probe = Encoder(cfg, params)
        out = probe.forward(ids, segs, lengths)
        return float(np.sum(np.tanh(out.scores)))

    out = enc.forward(ids, segs, lengths, keep_tape=True)
    analytic = enc.backward(out.tape, 1.0 - np.tanh(out.scores) ** 2)
    numeric = numerical_gradient(loss, enc.params)
    order = param_order(cfg)
    return max_relative_error(
        flatten_params(analytic, order), flatten_params(numeric, order)
    )


def _gradcheck_fusion(seed: int) -> float:
    import numpy as np

    from .encoder import max_relative_error
    from .ranker import FusionLayer, normalize

    rng = np.random.default_rng(seed)
    features = rng.normal(0.0, 1.0, size=(6, 5))
    gold = 2
    mask = np.ones(5, dtype=bool)

    def loss_of(w: np.ndarray, b: np.ndarray) -> float:
        probs = normalize(FusionLayer(w, b).fuse(features, mask))
        return -float(np.log(probs[gold]))

    fusion = FusionLayer.init(seed)
    fusion.w = fusion.w.astype(np.float64)
    probs = normalize(fusion.fuse(features, mask))
    dscore = probs.copy()
    dscore[gold] -= 1.0
    analytic = np.concatenate([features.T @ dscore, [dscore.sum()]])
    h = 1e-6
    numeric = np.zeros(6)
    for i in range(5):
        wp, wm = fusion.w.copy(), fusion.w.copy()
        wp[i] += h
        wm[i] -= h
        numeric[i] = (loss_of(wp, fusion.b) - loss_of(wm, fusion.b)) / (2 * h)
    bp, bm = fusion.b.copy(), fusion.b.copy()
    bp[0] += h
    bm[0] -= h
    numeric[5] = (loss_of(fusion.w, bp) - loss_of(fusion.w, bm)) / (2 * h)
    return max_relative_error(analytic, numeric)


def _cmd_gradcheck(args) -> int:
    _effective_config("gradcheck", {"seed": args.seed, "which": args.which})
    checks = []
    if args.which in ("all", "base"):
        checks.append(("base", _gradcheck_encoder(False, args.seed), 1e-3))
    if args.which in ("all", "aux"):
        checks.append(("aux", _gradcheck_encoder(True, args.seed), 1e-3))
    if args.which in ("all", "fusion"):
        checks.append(("fusion", _gradcheck_fusion(args.seed), 1e-4))
    failed = False
    for name, err, tol in checks:
        status = "PASS" if err < tol else "FAIL"
        failed = failed or err >= tol
        print(f"gradcheck {name}: max_rel_err={err:.3e} tol={tol:.0e} {status}")
    return 2 if failed else 0


def _cmd_synth(args) -> int:
    from .aliases import save_index
    from .corpus import dataset_stats, save_dataset
    from .synth import SynthConfig, synth_dataset, synth_separable

    index_out = args.index_out or f"{args.out}.index.bin"
    _effective_config(
        "synth",
        {"out": args.out, "index_out": index_out, "n_texts": args.n_texts,
         "seed": args.seed, "separable": args.separable, "force": args.force},
    )
    _guard_output(args.out, args.force)
    _guard_output(index_out, args.force)
    if args.separable:
        texts, index = synth_separable(n_texts=args.n_texts, seed=args.seed)
    else:
        texts, index = synth_dataset(SynthConfig(n_texts=args.n_texts, seed=args.seed))
    save_dataset(texts, args.out)
    save_index(index, index_out)
    print(dataset_stats(texts).summary())
    print(f"dataset -> {args.out}")
    print(f"index -> {index_out}")
    return 0


# ---------------------------------------------------------------- parser


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file; flags override it")
    g = p.add_argument_group("model")
    g.add_argument("--vocab-size", dest="vocab_size", type=int)
    g.add_argument("--dim", type=int)
    g.add_argument("--heads", type=int)
    g.add_argument("--layers", type=int)
    g.add_argument("--ff-dim", dest="ff_dim", type=int)
    g.add_argument("--window", type=int)
    g.add_argument("--dropout", type=float)
    g.add_argument("--pair-budget", dest="pair_budget", type=int)
    g.add_argument("--context-budget", dest="context_budget", type=int)
    g.add_argument("--desc-limit", dest="desc_limit", type=int)
    g.add_argument("--text-limit", dest="text_limit", type=int)
    g.add_argument("--k", type=int)
    g.add_argument("--max-k", dest="max_k", type=int)
    g.add_argument("--n-max", dest="n_max", type=int)
    g.add_argument("--levenshtein-mode", dest="levenshtein_mode",
                   choices=("max", "indel"))
    g.add_argument("--selection-chars", dest="selection_chars", type=int)
    g.add_argument("--chunk-rows", dest="chunk_rows", type=int)
    t = p.add_argument_group("training")
    t.add_argument("--seed", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-texts", dest="batch_texts", type=int)
    t.add_argument("--warmup-frac", dest="warmup_frac", type=float)
    t.add_argument("--weight-decay", dest="weight_decay", type=float)
    t.add_argument("--mask")
    t.add_argument("--fusion-freeze-frac", dest="fusion_freeze_frac", type=float)
    t.add_argument("--feature-dropout", dest="feature_dropout", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cqalink", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, help="cap BLAS/worker threads")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("build-index", help="build the alias dictionary index")
    p.add_argument("--pages", help="JSONL of {title, text} wikitext pages")
    p.add_argument("--counts", help="TSV of surface<TAB>entity<TAB>count")
    p.add_argument("--redirects", help="TSV of from<TAB>to page redirects")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=_cmd_build_index)

    p = sub.add_parser("candidates", help="inspect candidate generation")
    p.add_argument("--index", required=True)
    p.add_argument("--surface")
    p.add_argument("--data", help="JSONL dataset for gold-candidate recall")
    p.add_argument("--n-max", dest="n_max", type=int, default=30)
    p.set_defaults(func=_cmd_candidates)

    p = sub.add_parser("select", help="rank texts by string similarity to a context")
    p.add_argument("--context", required=True)
    p.add_argument("--text", action="append", help="candidate text (repeatable)")
    p.add_argument("--texts-file", help="file with one candidate text per line")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--selection-chars", dest="selection_chars", type=int)
    p.add_argument("--levenshtein-mode", dest="levenshtein_mode",
                   choices=("max", "indel"))
    p.set_defaults(func=_cmd_select)

    p = sub.add_parser("train", help="train a linker on one fold")
    p.add_argument("--data", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--out", help="checkpoint path")
    p.add_argument("--fold", type=int, default=0)
    p.add_argument("--force", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("link", help="link mentions with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mask", default="full")
    p.add_argument("--k", type=int)
    p.add_argument("--text-id", help="link a single CQA text")
    p.add_argument("--mention", type=int, help="mention position within --text-id")
    p.add_argument("--diagnostics", action="store_true")
    p.add_argument("--progress", action="store_true")
    p.add_argument("--out", help="JSONL of link results")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=_cmd_link)

    p = sub.add_parser("eval", help="evaluate a trained model on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mask", default="full")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="feature-mask ablation over folds")
    p.add_argument("--data", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--masks",
                   default="base,base+parallel,base+topic,base+user,full")
    p.add_argument("--folds", help="comma list of fold ids (default: all)")
    p.add_argument("--out", help="TSV report path (default: stdout)")
    p.add_argument("--force", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("sweep-k", help="accuracy as a function of k")
    p.add_argument("--data", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--ks", default="0,1,2,3,4,5")
    p.add_argument("--folds", help="comma list of fold ids (default: all)")
    p.add_argument("--out", help="TSV report path (default: stdout)")
    p.add_argument("--force", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_sweep_k)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--which", choices=("all", "base", "aux", "fusion"), default="all")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("synth", help="emit a synthetic dataset plus index")
    p.add_argument("--out", required=True)
    p.add_argument("--index-out", dest="index_out")
    p.add_argument("--n-texts", dest="n_texts", type=int, default=260)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--separable", action="store_true")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=_cmd_synth)

    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:  # --help
        return int(e.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if getattr(args, "verbose", False) else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if getattr(args, "threads", None):
        if args.threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return 1
        for var in _THREAD_ENV_VARS:
            os.environ[var] = str(args.threads)
    if getattr(args, "command", None) is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except BrokenPipeError:
        return 0
    except Exception as e:
        from .ranker import TrainingDiverged

        if isinstance(e, TrainingDiverged):
            print(f"error: training diverged: {e}", file=sys.stderr)
            return 3
        if os.environ.get("CQALINK_DEBUG"):
            raise
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
