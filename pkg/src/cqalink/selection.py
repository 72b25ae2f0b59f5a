"""Useful-text selection from auxiliary data.

Each auxiliary text is scored against the mention context by the average of
three string similarities (Ratcliff-Obershelp, Jaro-Winkler, Levenshtein
ratio) and the top-k texts are kept, in descending score order.  Similarity
is computed at the character level on normalized text: lowercased,
whitespace-collapsed, and truncated to a configurable number of characters
to bound the quadratic cost.
"""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass, field

from . import similarity

_WS_RE = re.compile(r"\s+")


@dataclass(frozen=True)
class SelectionConfig:
    max_chars: int = 512
    levenshtein_mode: str = "max"  # or "indel", see similarity.levenshtein_ratio


@dataclass(frozen=True)
class ScoredText:
    """An auxiliary text with its selection score.

    score is the mean of the three component similarities; source_rank is
    the text's position in the original list (used for tie-breaking and
    diagnostics).
    """

    text: str
    score: float
    source_rank: int
    components: dict = field(default_factory=dict, compare=False)


def normalize_for_similarity(text: str, max_chars: int = 512) -> str:
    """Lowercase, collapse whitespace, and truncate to max_chars characters."""
    text = unicodedata.normalize("NFC", text).lower()
    text = _WS_RE.sub(" ", text).strip()
    return text[:max_chars]


def similarity_score(context: str, text: str, config: SelectionConfig | None = None):
    """Mean of the three similarities between normalized context and text.

    Returns (score, components) where components maps measure name to value.
    """
    cfg = config or SelectionConfig()
    a = normalize_for_similarity(context, cfg.max_chars)
    b = normalize_for_similarity(text, cfg.max_chars)
    components = {
        "ratcliff_obershelp": similarity.ratcliff_obershelp(a, b),
        "jaro_winkler": similarity.jaro_winkler(a, b),
        "levenshtein_ratio": similarity.levenshtein_ratio(a, b, mode=cfg.levenshtein_mode),
    }
    return sum(components.values()) / 3.0, components


def select_useful_texts(
    context: str,
    texts: list[str],
    k: int,
    config: SelectionConfig | None = None,
) -> list[ScoredText]:
    """Top-k texts by mean string similarity to the mention context.

    Output is in descending score order; equal scores preserve the original
    text order.  With fewer than k texts all are returned; k=0 selects none.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    if k == 0 or not texts:
        return []
    scored = []
    for rank, text in enumerate(texts):
        score, components = similarity_score(context, text, config)
        scored.append(ScoredText(text=text, score=score, source_rank=rank, components=components))
    scored.sort(key=lambda s: (-s.score, s.source_rank))
    return scored[:k]
