"""End-to-end linking: context window, candidates, per-kind useful-text
selection, encoder scoring, fusion, prediction.

Per (mention, candidate) the full feature mask costs exactly one pair
encoding plus three auxiliary encodings; masked or empty auxiliary kinds
skip their encoding entirely, which the diagnostics expose as invocation
counts and skip reasons.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .aliases import AliasIndex
from .corpus import CqaText, Mention
from .evaluation import EvalReport
from .features import AUX_KINDS, build_instance, score_instances
from .ranker import FeatureMask, Model, normalize, predict_index

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LinkRequest:
    text: CqaText
    mention: Mention
    mask: str = "full"
    k: int | None = None  # None: model configuration
    n_max: int | None = None


@dataclass
class LinkDiagnostics:
    context: str
    candidates: list[str]
    priors: list[float]
    features: list[list[float]]
    fused_scores: list[float]
    probabilities: list[float]
    prediction_index: int | None
    gold_index: int | None
    selections: dict[str, dict]
    encoder_invocations: dict[str, int]

    def to_dict(self) -> dict:
        return {
            "context": self.context,
            "candidates": self.candidates,
            "priors": self.priors,
            "features": self.features,
            "fused_scores": self.fused_scores,
            "probabilities": self.probabilities,
            "prediction_index": self.prediction_index,
            "gold_index": self.gold_index,
            "selections": self.selections,
            "encoder_invocations": self.encoder_invocations,
        }


def link_mention(
    req: LinkRequest, index: AliasIndex, model: Model
) -> tuple[str | None, LinkDiagnostics]:
    """Predict the entity for one mention; None means unresolvable."""
    mc = model.config
    overrides = {}
    if req.k is not None:
        overrides["k"] = req.k
    if req.n_max is not None:
        overrides["n_max"] = req.n_max
    if overrides:
        mc = replace(mc, **overrides)  # re-validates ranges
    mask = FeatureMask.from_string(req.mask).as_array()
    inst = build_instance(req.text, req.mention, index, model.tokenizer, mc)
    result = score_instances(
        [inst],
        model.base,
        model.aux,
        model.tokenizer.pad_id,
        mask,
        chunk_rows=mc.chunk_rows,
    )
    features = result.features[0]
    if inst.n_candidates:
        fused = model.fusion.fuse(features, mask)
        probs = normalize(fused)
        pred_idx = predict_index(fused)
    else:
        fused = np.zeros(0)
        probs = np.zeros(0)
        pred_idx = None
    selections = {}
    for kind in AUX_KINDS:
        sel = inst.selections[kind]
        reason = sel.skip_reason
        if reason is None and not mask[2 + AUX_KINDS.index(kind)]:
            reason = "masked"
        selections[kind] = {
            "pool_size": sel.pool_size,
            "skip_reason": reason,
            "selected": [
                {"text": st.text, "score": st.score, "source_rank": st.source_rank}
                for st in sel.texts
            ],
        }
    diagnostics = LinkDiagnostics(
        context=inst.context,
        candidates=[c.entity for c in inst.candidate_set.candidates],
        priors=[float(p) for p in inst.priors],
        features=[[float(v) for v in row] for row in features],
        fused_scores=[float(v) for v in fused],
        probabilities=[float(v) for v in probs],
        prediction_index=pred_idx,
        gold_index=inst.gold_index,
        selections=selections,
        encoder_invocations=dict(result.invocations),
    )
    entity = (
        inst.candidate_set.candidates[pred_idx].entity if pred_idx is not None else None
    )
    return entity, diagnostics


@dataclass
class LinkResult:
    text_id: str
    mention: Mention
    prediction: str | None
    error: str | None = None
    diagnostics: LinkDiagnostics | None = None


def link_corpus(
    texts: Sequence[CqaText],
    index: AliasIndex,
    model: Model,
    mask: str = "full",
    *,
    keep_diagnostics: bool = False,
    progress: bool = False,
) -> tuple[list[LinkResult], EvalReport]:
    """link_mention over every mention; per-mention failures are recorded
    and never abort the batch."""
    mentions = [(z, m) for z in texts for m in z.mentions]
    iterator = mentions
    if progress and mentions:
        try:
            from tqdm import tqdm

            iterator = tqdm(mentions, desc="linking", unit="mention")
        except ImportError:
            pass
    results: list[LinkResult] = []
    t0 = time.monotonic()
    for z, m in iterator:
        try:
            prediction, diagnostics = link_mention(
                LinkRequest(text=z, mention=m, mask=mask), index, model
            )
            results.append(
                LinkResult(
                    text_id=z.id,
                    mention=m,
                    prediction=prediction,
                    diagnostics=diagnostics if keep_diagnostics else None,
                )
            )
        except Exception as e:  # per-mention isolation
            log.error("mention %r in %s failed: %s", m.surface, z.id, e)
            results.append(
                LinkResult(text_id=z.id, mention=m, prediction=None, error=str(e))
            )
    elapsed = time.monotonic() - t0
    if mentions:
        log.info(
            "linked %d mentions in %.2fs (%.1f mentions/s)",
            len(mentions),
            elapsed,
            len(mentions) / elapsed if elapsed > 0 else float("inf"),
        )
    labeled = [r for r in results if r.mention.gold is not None]
    n_correct = sum(1 for r in labeled if r.prediction == r.mention.gold)
    n_unresolvable = sum(
        1 for r in labeled if r.prediction is None and r.error is None
    )
    report = EvalReport(
        accuracy=n_correct / len(labeled) if labeled else 0.0,
        n_mentions=len(labeled),
        n_correct=n_correct,
        n_unresolvable=n_unresolvable,
    )
    return results, report
