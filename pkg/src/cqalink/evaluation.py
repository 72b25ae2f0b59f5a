"""Accuracy, the 5-fold protocol, ablation tables, and k-sweeps.

Folds are drawn at CQA-text granularity: the five test sets partition the
dataset, and each fold splits roughly 70/10/20 into train/validation/test.
Ablations train one model per (fold, feature mask); k-sweeps train one per
(fold, k).  Fold seeds derive deterministically from the master seed so
runs are reproducible and independently parallelizable.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .aliases import AliasIndex
from .candidates import candidate_recall
from .config import ModelConfig, TrainConfig
from .corpus import CqaText
from .features import build_instances
from .ranker import (
    FeatureMask,
    Model,
    TrainingDiverged,
    labeled_accuracy,
    predict_instances,
    train,
)

log = logging.getLogger(__name__)

N_FOLDS = 5
VAL_FRACTION = 0.1


def accuracy(predictions: Sequence[str | None], golds: Sequence[str]) -> float:
    """Exact-match fraction; an unresolvable (None) prediction is wrong."""
    if len(predictions) != len(golds):
        raise ValueError(
            f"{len(predictions)} predictions vs {len(golds)} golds"
        )
    if not golds:
        raise ValueError("accuracy is undefined on zero mentions")
    if any(g is None for g in golds):
        raise ValueError("every gold label must be present")
    correct = sum(1 for p, g in zip(predictions, golds) if p == g)
    return correct / len(golds)


@dataclass
class Fold:
    train: list[CqaText]
    val: list[CqaText]
    test: list[CqaText]


def make_folds(texts: Sequence[CqaText], seed: int) -> list[Fold]:
    """Five (train, val, test) splits whose test sets partition the data."""
    n = len(texts)
    if n < N_FOLDS:
        raise ValueError(f"need at least {N_FOLDS} CQA texts, got {n}")
    order = list(range(n))
    np.random.default_rng(seed).shuffle(order)
    base, extra = divmod(n, N_FOLDS)
    chunks: list[list[int]] = []
    pos = 0
    for i in range(N_FOLDS):
        size = base + (1 if i < extra else 0)
        chunks.append(order[pos : pos + size])
        pos += size
    n_val = round(n * VAL_FRACTION)
    folds = []
    for i in range(N_FOLDS):
        test_idx = chunks[i]
        rest = [j for k, chunk in enumerate(chunks) if k != i for j in chunk]
        val_idx = rest[:n_val]
        train_idx = rest[n_val:]
        folds.append(
            Fold(
                train=[texts[j] for j in train_idx],
                val=[texts[j] for j in val_idx],
                test=[texts[j] for j in test_idx],
            )
        )
    return folds


def fold_seed(master_seed: int, fold: int) -> int:
    """Per-fold training seed, stable and independent across folds."""
    return int(np.random.SeedSequence([master_seed, fold]).generate_state(1)[0])


@dataclass
class EvalReport:
    accuracy: float
    n_mentions: int
    n_correct: int
    n_unresolvable: int
    candidate_recall: float | None = None
    mask_breakdown: dict[str, float] = field(default_factory=dict)

    def summary(self) -> str:
        lines = [
            f"accuracy {self.accuracy:.4f} ({self.n_correct}/{self.n_mentions}, "
            f"{self.n_unresolvable} unresolvable)"
        ]
        if self.candidate_recall is not None:
            lines.append(f"candidate-recall ceiling {self.candidate_recall:.4f}")
        for mask, acc in self.mask_breakdown.items():
            lines.append(f"  {mask}: {acc:.4f}")
        return "\n".join(lines)


def evaluate_model(
    model: Model,
    texts: Sequence[CqaText],
    index: AliasIndex,
    mask: np.ndarray,
    *,
    with_recall: bool = True,
) -> EvalReport:
    """Accuracy over the gold-labeled mentions of a text collection."""
    instances = build_instances(texts, index, model.tokenizer, model.config)
    predictions, _ = predict_instances(model, instances, mask)
    labeled = [
        (inst, pred)
        for inst, pred in zip(instances, predictions)
        if inst.mention.gold is not None
    ]
    n_labeled, n_correct = labeled_accuracy(instances, predictions)
    n_unresolvable = sum(1 for inst, _ in labeled if inst.n_candidates == 0)
    recall = None
    if with_recall and n_labeled:
        recall = candidate_recall(texts, index, model.config.n_max)
    return EvalReport(
        accuracy=n_correct / n_labeled if n_labeled else 0.0,
        n_mentions=n_labeled,
        n_correct=n_correct,
        n_unresolvable=n_unresolvable,
        candidate_recall=recall,
    )


@dataclass
class AblationCell:
    fold: int
    accuracy: float | None
    error: str | None = None


@dataclass
class AblationRow:
    mask: str
    cells: list[AblationCell]

    @property
    def mean_accuracy(self) -> float | None:
        values = [c.accuracy for c in self.cells if c.accuracy is not None]
        return sum(values) / len(values) if values else None


def run_ablation(
    texts: Sequence[CqaText],
    index: AliasIndex,
    mc: ModelConfig,
    tc: TrainConfig,
    masks: Sequence[str],
    *,
    seed: int | None = None,
    folds: Sequence[int] | None = None,
) -> list[AblationRow]:
    """One (train, eval) run per fold per mask; delta column is taken
    against the first mask when rendering.  Training failures are recorded
    per cell, never aborting the table."""
    if not masks:
        raise ValueError("masks must be nonempty")
    master = tc.seed if seed is None else seed
    all_folds = make_folds(texts, master)
    fold_ids = list(folds) if folds is not None else list(range(N_FOLDS))
    rows = [AblationRow(mask=m, cells=[]) for m in masks]
    for fid in fold_ids:
        fold = all_folds[fid]
        f_seed = fold_seed(master, fid)
        for row in rows:
            run_tc = replace(tc, seed=f_seed, mask=row.mask)
            try:
                model, _ = train(fold.train, fold.val, index, mc, run_tc)
                mask_arr = FeatureMask.from_string(row.mask).as_array()
                report = evaluate_model(
                    model, fold.test, index, mask_arr, with_recall=False
                )
                row.cells.append(AblationCell(fold=fid, accuracy=report.accuracy))
            except TrainingDiverged as e:
                log.error("fold %d mask %s diverged: %s", fid, row.mask, e)
                row.cells.append(AblationCell(fold=fid, accuracy=None, error=str(e)))
    return rows


def ablation_tsv(rows: Sequence[AblationRow]) -> str:
    """mask, per-fold accuracies, mean, delta vs the first row."""
    if not rows:
        return ""
    fold_ids = [c.fold for c in rows[0].cells]
    header = ["mask"] + [f"fold{f}" for f in fold_ids] + ["mean", "delta"]
    base_mean = rows[0].mean_accuracy
    lines = ["\t".join(header)]
    for row in rows:
        cells = [
            f"{c.accuracy:.4f}" if c.accuracy is not None else f"error:{c.error}"
            for c in row.cells
        ]
        mean = row.mean_accuracy
        mean_s = f"{mean:.4f}" if mean is not None else "n/a"
        if mean is None or base_mean is None:
            delta_s = "n/a"
        else:
            delta_s = f"{mean - base_mean:+.4f}"
        lines.append("\t".join([row.mask] + cells + [mean_s, delta_s]))
    return "\n".join(lines) + "\n"


@dataclass
class SweepPoint:
    k: int
    cells: list[AblationCell]

    @property
    def mean_accuracy(self) -> float | None:
        values = [c.accuracy for c in self.cells if c.accuracy is not None]
        return sum(values) / len(values) if values else None


def sweep_k(
    texts: Sequence[CqaText],
    index: AliasIndex,
    mc: ModelConfig,
    tc: TrainConfig,
    ks: Sequence[int],
    *,
    seed: int | None = None,
    folds: Sequence[int] | None = None,
) -> list[SweepPoint]:
    """One full train/eval per k; model shapes are shared across ks (the
    aux position table is sized by max_k) so equal seeds start from
    identical parameters."""
    if not ks:
        raise ValueError("ks must be nonempty")
    if any(k < 0 for k in ks):
        raise ValueError("every k must be >= 0")
    master = tc.seed if seed is None else seed
    all_folds = make_folds(texts, master)
    fold_ids = list(folds) if folds is not None else list(range(N_FOLDS))
    max_k = max(max(ks), mc.max_k)
    points = [SweepPoint(k=k, cells=[]) for k in ks]
    for fid in fold_ids:
        fold = all_folds[fid]
        f_seed = fold_seed(master, fid)
        for point in points:
            run_mc = replace(mc, k=point.k, max_k=max_k)
            run_tc = replace(tc, seed=f_seed)
            try:
                model, _ = train(fold.train, fold.val, index, run_mc, run_tc)
                mask_arr = FeatureMask.from_string(run_tc.mask).as_array()
                report = evaluate_model(
                    model, fold.test, index, mask_arr, with_recall=False
                )
                point.cells.append(AblationCell(fold=fid, accuracy=report.accuracy))
            except TrainingDiverged as e:
                log.error("fold %d k=%d diverged: %s", fid, point.k, e)
                point.cells.append(AblationCell(fold=fid, accuracy=None, error=str(e)))
    return points


def sweep_tsv(points: Sequence[SweepPoint]) -> str:
    """Plot-ready TSV: k, per-fold accuracies, mean."""
    if not points:
        return ""
    fold_ids = [c.fold for c in points[0].cells]
    header = ["k"] + [f"fold{f}" for f in fold_ids] + ["mean"]
    lines = ["\t".join(header)]
    for point in points:
        cells = [
            f"{c.accuracy:.4f}" if c.accuracy is not None else f"error:{c.error}"
            for c in point.cells
        ]
        mean = point.mean_accuracy
        lines.append(
            "\t".join([str(point.k)] + cells + [f"{mean:.4f}" if mean is not None else "n/a"])
        )
    return "\n".join(lines) + "\n"
