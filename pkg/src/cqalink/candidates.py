"""Dictionary-based candidate generation.

Each mention surface is looked up in the alias index and the top-n_max
entities by prior are kept.  Priors stay global p(e|m) values; pruning
does not renormalize them.
"""

from __future__ import annotations

from dataclasses import dataclass

from .aliases import AliasIndex
from .corpus import CqaText, Mention


@dataclass(frozen=True)
class Candidate:
    entity: str
    prior: float
    description: str


@dataclass(frozen=True)
class CandidateSet:
    mention: Mention
    candidates: tuple[Candidate, ...]
    gold_index: int | None

    @property
    def unresolvable(self) -> bool:
        return not self.candidates


def generate_candidates(mention: Mention, index: AliasIndex, n_max: int = 30) -> CandidateSet:
    """Top-n_max candidates for the mention surface, best prior first.

    An unknown surface yields an empty, unresolvable set.  gold_index is
    set only when the mention is labeled and the gold entity survived
    pruning.
    """
    if n_max < 1:
        raise ValueError(f"n_max must be >= 1, got {n_max}")
    entries = index.candidates_for(mention.surface)[:n_max]
    candidates = tuple(
        Candidate(entity=e.entity, prior=e.prior, description=index.description(e.entity))
        for e in entries
    )
    gold_index = None
    if mention.gold is not None:
        for i, c in enumerate(candidates):
            if c.entity == mention.gold:
                gold_index = i
                break
    return CandidateSet(mention=mention, candidates=candidates, gold_index=gold_index)


def candidate_recall(dataset: list[CqaText], index: AliasIndex, n_max: int = 30) -> float:
    """Fraction of gold-labeled mentions whose candidate set contains gold."""
    labeled = 0
    hit = 0
    for z in dataset:
        for m in z.mentions:
            if m.gold is None:
                continue
            labeled += 1
            if generate_candidates(m, index, n_max).gold_index is not None:
                hit += 1
    if labeled == 0:
        raise ValueError("candidate recall is undefined: no gold-labeled mentions")
    return hit / labeled
