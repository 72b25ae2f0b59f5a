"""Per-mention feature assembly and batched encoder scoring.

For every (mention, candidate) pair the ranker needs five features: the
context-description score, the prior, and one score per auxiliary-data
kind (parallel answers, topic meta-data, user meta-data).  This module
gathers the per-kind text pools, runs useful-text selection, pre-tokenizes
all encoder inputs once per mention, and scores many mentions in a single
padded batch per encoder.  A kind whose selected list is empty contributes
a zero feature and never reaches the encoder; the same holds for a kind
masked out by an ablation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tokenizer as tok
from .aliases import AliasIndex
from .candidates import CandidateSet, generate_candidates
from .config import ModelConfig
from .corpus import CqaText, Mention
from .encoder import (
    Encoder,
    build_aux_tokens,
    build_pair_tokens,
    mention_context,
    pad_batch,
)
from .selection import ScoredText, SelectionConfig, select_useful_texts

AUX_KINDS = ("parallel", "topic", "user")
N_FEATURES = 5
FEATURE_NAMES = ("ctxt", "prior", "aux_parallel", "aux_topic", "aux_user")
_KIND_COLUMN = {"parallel": 2, "topic": 3, "user": 4}


def gather_aux_texts(z: CqaText, m: Mention) -> dict[str, list[str]]:
    """The three raw auxiliary pools for a mention.

    Parallel answers: every other answer (all answers for a question-hosted
    mention).  Topic: all tags' questions pooled in order.  User: the
    answering user's questions; for a question-hosted mention the union of
    all answering users' questions, first occurrence kept.
    """
    parallel = z.mention_parallel_answers(m)
    topic = [q for tag in z.topic_tags for q in tag.questions]
    if m.in_question:
        seen: set[str] = set()
        user: list[str] = []
        for a in z.answers:
            for q in a.user.questions:
                if q not in seen:
                    seen.add(q)
                    user.append(q)
    else:
        user = list(z.answers[m.unit].user.questions)
    return {"parallel": parallel, "topic": topic, "user": user}


@dataclass
class AuxSelection:
    texts: list[ScoredText]  # selected, descending selection score
    pool_size: int
    skip_reason: str | None  # "no-texts" | "k-zero" | None


@dataclass
class MentionInstance:
    """Everything scoring needs for one mention, pre-tokenized."""

    text_id: str
    mention: Mention
    context: str  # marker-bearing token window
    candidate_set: CandidateSet
    priors: np.ndarray
    gold_index: int | None
    pair_ids: list[np.ndarray]
    pair_segs: list[np.ndarray]
    aux_ids: dict[str, list[np.ndarray] | None]
    aux_segs: dict[str, list[np.ndarray] | None]
    selections: dict[str, AuxSelection]

    @property
    def n_candidates(self) -> int:
        return len(self.pair_ids)


def build_instance(
    z: CqaText,
    m: Mention,
    index: AliasIndex,
    tk: tok.Tokenizer,
    mc: ModelConfig,
) -> MentionInstance:
    cs = generate_candidates(m, index, mc.n_max)
    context = mention_context(z, m, mc.context_budget)
    # similarity selection sees the window without the marker furniture
    sel_context = context.replace(tok.M, " ").replace(tok.SLASH_M, " ")
    sel_cfg = SelectionConfig(max_chars=mc.selection_chars, levenshtein_mode=mc.levenshtein_mode)
    pools = gather_aux_texts(z, m)
    selections: dict[str, AuxSelection] = {}
    for kind in AUX_KINDS:
        texts = pools[kind]
        if not texts:
            selections[kind] = AuxSelection([], 0, "no-texts")
        elif mc.k == 0:
            selections[kind] = AuxSelection([], len(texts), "k-zero")
        else:
            chosen = select_useful_texts(sel_context, texts, mc.k, sel_cfg)
            selections[kind] = AuxSelection(chosen, len(texts), None)

    context_tokens = tok.tokenize(context)
    desc_tokens = [tok.tokenize(c.description) for c in cs.candidates]
    pair_ids: list[np.ndarray] = []
    pair_segs: list[np.ndarray] = []
    for d in desc_tokens:
        tokens, segs = build_pair_tokens(context_tokens, d, mc.pair_budget)
        pair_ids.append(tk.encode_tokens(tokens))
        pair_segs.append(np.asarray(segs, dtype=np.int32))

    aux_ids: dict[str, list[np.ndarray] | None] = {}
    aux_segs: dict[str, list[np.ndarray] | None] = {}
    for kind in AUX_KINDS:
        sel = selections[kind]
        if not sel.texts:
            aux_ids[kind] = None
            aux_segs[kind] = None
            continue
        text_tokens = [tok.tokenize(st.text) for st in sel.texts]
        ids_list: list[np.ndarray] = []
        segs_list: list[np.ndarray] = []
        for d in desc_tokens:
            tokens, segs = build_aux_tokens(d, text_tokens, mc.desc_limit, mc.text_limit)
            ids_list.append(tk.encode_tokens(tokens))
            segs_list.append(np.asarray(segs, dtype=np.int32))
        aux_ids[kind] = ids_list
        aux_segs[kind] = segs_list

    return MentionInstance(
        text_id=z.id,
        mention=m,
        context=context,
        candidate_set=cs,
        priors=np.array([c.prior for c in cs.candidates], dtype=np.float64),
        gold_index=cs.gold_index,
        pair_ids=pair_ids,
        pair_segs=pair_segs,
        aux_ids=aux_ids,
        aux_segs=aux_segs,
        selections=selections,
    )


def build_instances(
    texts: Sequence[CqaText],
    index: AliasIndex,
    tk: tok.Tokenizer,
    mc: ModelConfig,
) -> list[MentionInstance]:
    return [build_instance(z, m, index, tk, mc) for z in texts for m in z.mentions]


def _forward_in_chunks(
    encoder: Encoder,
    id_arrays: list[np.ndarray],
    seg_arrays: list[np.ndarray],
    pad_id: int,
    chunk_rows: int,
    train: bool,
    rng: np.random.Generator | None,
    keep_tape: bool,
):
    scores = np.zeros(len(id_arrays), dtype=encoder.dtype)
    chunks: list[tuple[dict, int, int]] = []
    for start in range(0, len(id_arrays), chunk_rows):
        end = min(start + chunk_rows, len(id_arrays))
        ids, segs, lengths = pad_batch(id_arrays[start:end], seg_arrays[start:end], pad_id)
        out = encoder.forward(
            ids, segs, lengths, train=train, rng=rng, keep_tape=keep_tape
        )
        scores[start:end] = out.scores
        if keep_tape:
            chunks.append((out.tape, start, end))
    return scores, chunks


def _backward_in_chunks(
    encoder: Encoder, chunks: list[tuple[dict, int, int]], dscores: np.ndarray
) -> dict[str, np.ndarray]:
    grads = {name: np.zeros_like(arr) for name, arr in encoder.params.items()}
    for tape, start, end in chunks:
        for name, g in encoder.backward(tape, dscores[start:end]).items():
            grads[name] += g
    return grads


@dataclass
class ScoreResult:
    features: list[np.ndarray]  # per instance, (n_candidates, 5)
    pair_chunks: list
    aux_chunks: list
    pair_ranges: list[tuple[int, int]]
    aux_ranges: dict[str, list[tuple[int, int] | None]]
    invocations: dict[str, int]  # encoder rows actually run, per stream
    mask: np.ndarray


def score_instances(
    instances: Sequence[MentionInstance],
    base: Encoder,
    aux: Encoder,
    pad_id: int,
    mask: np.ndarray,
    *,
    chunk_rows: int = 256,
    train: bool = False,
    rng: np.random.Generator | None = None,
    keep_tape: bool = False,
) -> ScoreResult:
    """Score every (mention, candidate) with one padded batch per encoder.

    mask is the 5-flag feature mask; a masked feature's encoder rows are
    never built, so ablations really skip the work.
    """
    mask = np.asarray(mask, dtype=bool)
    dtype = base.dtype

    pair_rows_ids: list[np.ndarray] = []
    pair_rows_segs: list[np.ndarray] = []
    pair_ranges: list[tuple[int, int]] = []
    for inst in instances:
        start = len(pair_rows_ids)
        if mask[0]:
            pair_rows_ids.extend(inst.pair_ids)
            pair_rows_segs.extend(inst.pair_segs)
        pair_ranges.append((start, len(pair_rows_ids)))

    aux_rows_ids: list[np.ndarray] = []
    aux_rows_segs: list[np.ndarray] = []
    aux_ranges: dict[str, list[tuple[int, int] | None]] = {k: [] for k in AUX_KINDS}
    kind_rows = {k: 0 for k in AUX_KINDS}
    for kind in AUX_KINDS:
        col = _KIND_COLUMN[kind]
        for inst in instances:
            if not mask[col] or inst.aux_ids[kind] is None:
                aux_ranges[kind].append(None)
                continue
            start = len(aux_rows_ids)
            aux_rows_ids.extend(inst.aux_ids[kind])
            aux_rows_segs.extend(inst.aux_segs[kind])
            aux_ranges[kind].append((start, len(aux_rows_ids)))
            kind_rows[kind] += len(inst.aux_ids[kind])

    pair_scores, pair_chunks = (
        _forward_in_chunks(base, pair_rows_ids, pair_rows_segs, pad_id, chunk_rows, train, rng, keep_tape)
        if pair_rows_ids
        else (np.zeros(0, dtype=dtype), [])
    )
    aux_scores, aux_chunks = (
        _forward_in_chunks(aux, aux_rows_ids, aux_rows_segs, pad_id, chunk_rows, train, rng, keep_tape)
        if aux_rows_ids
        else (np.zeros(0, dtype=dtype), [])
    )

    features: list[np.ndarray] = []
    for idx, inst in enumerate(instances):
        f = np.zeros((inst.n_candidates, N_FEATURES), dtype=np.float64)
        start, end = pair_ranges[idx]
        if end > start:
            f[:, 0] = pair_scores[start:end]
        if mask[1]:
            f[:, 1] = inst.priors
        for kind in AUX_KINDS:
            rng_k = aux_ranges[kind][idx]
            if rng_k is not None:
                f[:, _KIND_COLUMN[kind]] = aux_scores[rng_k[0] : rng_k[1]]
        features.append(f)

    invocations = {"pair": len(pair_rows_ids), **kind_rows}
    return ScoreResult(
        features=features,
        pair_chunks=pair_chunks,
        aux_chunks=aux_chunks,
        pair_ranges=pair_ranges,
        aux_ranges=aux_ranges,
        invocations=invocations,
        mask=mask,
    )


def backward_instances(
    result: ScoreResult,
    instances: Sequence[MentionInstance],
    base: Encoder,
    aux: Encoder,
    dfeatures: list[np.ndarray],
) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Push per-feature gradients back through both encoder batches."""
    n_pair = result.pair_ranges[-1][1] if result.pair_ranges else 0
    dscores_pair = np.zeros(n_pair, dtype=base.dtype)
    for idx, (start, end) in enumerate(result.pair_ranges):
        if end > start:
            dscores_pair[start:end] = dfeatures[idx][:, 0]

    n_aux = sum(
        r[1] - r[0]
        for kind in AUX_KINDS
        for r in result.aux_ranges[kind]
        if r is not None
    )
    dscores_aux = np.zeros(n_aux, dtype=aux.dtype)
    for kind in AUX_KINDS:
        col = _KIND_COLUMN[kind]
        for idx, rng_k in enumerate(result.aux_ranges[kind]):
            if rng_k is not None:
                dscores_aux[rng_k[0] : rng_k[1]] = dfeatures[idx][:, col]

    grads_base = (
        _backward_in_chunks(base, result.pair_chunks, dscores_pair)
        if result.pair_chunks
        else {name: np.zeros_like(a) for name, a in base.params.items()}
    )
    grads_aux = (
        _backward_in_chunks(aux, result.aux_chunks, dscores_aux)
        if result.aux_chunks
        else {name: np.zeros_like(a) for name, a in aux.params.items()}
    )
    return grads_base, grads_aux
