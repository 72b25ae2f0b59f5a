"""Synthetic CQA corpora with controllable auxiliary-data signal.

Every CQA text hosts four question mentions, each with four candidate
entities sharing fixed anchor counts (so priors are identical across
surfaces).  A mention is one of four types:

  a          the gold keyword sits in the mention context, so the base
             context-description module can solve it;
  b-parallel the context is neutral and the keyword appears, next to the
             surface, inside exactly one answer (a parallel answer);
  b-topic    likewise, inside one topic-tag question;
  b-user     likewise, inside one answering user's question.

Gold ranks are drawn per occurrence: uniform over all four ranks for
type a, uniform over the three non-top ranks for type b, so neither
prior-argmax nor inverted-prior guessing can solve type b.  Decoy texts
carry the surface without the keyword and randomize where selection ranks
the signal; neutral keyword-free texts pad the pools so accuracy
plateaus once k covers the signal.  Each candidate group draws its four
keywords from its own block, and the four surfaces in a text come from
four different blocks, so no pool text can accidentally vote for another
mention's candidate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .aliases import AliasIndex, AliasIndexBuilder
from .corpus import Answer, CqaText, Mention, TopicTag, User

TEXT_TYPES = ("a", "p", "t", "u")


@dataclass(frozen=True)
class SynthConfig:
    n_texts: int = 260
    n_blocks: int = 5
    surfaces_per_block: int = 12
    candidates_per_surface: int = 4
    n_fillers: int = 80
    counts: tuple[int, ...] = (57, 23, 12, 8)
    type_a_fraction: float = 0.4
    # chance that a mention's signal text also lands in each non-primary
    # pool; densifies the aux training signal without collapsing the
    # per-type structure
    echo_prob: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if len(self.counts) != self.candidates_per_surface:
            raise ValueError("counts must have one entry per candidate")
        if sorted(self.counts, reverse=True) != list(self.counts) or len(set(self.counts)) != len(
            self.counts
        ):
            raise ValueError("counts must be strictly decreasing")


MENTIONS_PER_TEXT = 4
N_ANSWERS = 8


_LETTERS = np.array(list("abcdefghijklmnopqrstuvwxyz"))


def _random_words(rng: np.random.Generator, n: int, lo: int, hi: int, taken: set[str]) -> list[str]:
    """Distinct random-letter words; character-diverse so string similarity
    keys on shared whole tokens rather than shared naming templates."""
    words: list[str] = []
    while len(words) < n:
        length = int(rng.integers(lo, hi + 1))
        w = "".join(_LETTERS[rng.integers(0, 26, length)])
        if w not in taken:
            taken.add(w)
            words.append(w)
    return words


class _Synth:
    def __init__(self, cfg: SynthConfig):
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        n_surfaces = cfg.n_blocks * cfg.surfaces_per_block
        taken: set[str] = set()
        self.surfaces = _random_words(self.rng, n_surfaces, 8, 10, taken)
        self.keywords = _random_words(
            self.rng, cfg.n_blocks * cfg.candidates_per_surface, 8, 10, taken
        )
        self.fillers = _random_words(self.rng, cfg.n_fillers, 4, 7, taken)
        # candidate keywords: each surface permutes its block's keywords so
        # rank and keyword are not globally correlated
        self.group_keywords: list[list[str]] = []
        for i in range(n_surfaces):
            block = self._block(i)
            pool = self.keywords[
                block * cfg.candidates_per_surface : (block + 1) * cfg.candidates_per_surface
            ]
            self.group_keywords.append(list(self.rng.permutation(pool)))
        self.entities = [
            [f"Concept_{i:02d}_{r}" for r in range(cfg.candidates_per_surface)]
            for i in range(n_surfaces)
        ]

    def _block(self, surface_idx: int) -> int:
        return surface_idx % self.cfg.n_blocks

    def _fill(self, lo: int, hi: int) -> list[str]:
        n = int(self.rng.integers(lo, hi + 1))
        return [self.fillers[int(j)] for j in self.rng.integers(0, len(self.fillers), n)]

    def description(self, surface_idx: int, rank: int) -> str:
        """Near-minimal text containing the surface and the candidate's keyword."""
        tokens = [self.surfaces[surface_idx], self.group_keywords[surface_idx][rank]]
        if self.rng.integers(0, 2):
            tokens.reverse()
        for filler in self._fill(0, 1):
            tokens.insert(int(self.rng.integers(0, len(tokens) + 1)), filler)
        return " ".join(tokens)

    def signal_text(self, surface_idx: int, rank: int) -> str:
        return " ".join(
            [self.surfaces[surface_idx], self.group_keywords[surface_idx][rank]]
            + self._fill(0, 1)
        )

    def decoy_text(self, surface_idxs: Sequence[int]) -> str:
        tokens: list[str] = []
        for i in surface_idxs:
            tokens += [self.surfaces[i]] + self._fill(0, 1)
        return " ".join(tokens)

    def neutral_text(self) -> str:
        return " ".join(self._fill(2, 2))

    def build_index(self) -> AliasIndex:
        builder = AliasIndexBuilder()
        descriptions: dict[str, str] = {}
        for i, surface in enumerate(self.surfaces):
            for r, entity in enumerate(self.entities[i]):
                builder.add_anchor(entity, surface, self.cfg.counts[r])
                descriptions[entity] = self.description(i, r)
        return builder.build(descriptions)

    def pick_surfaces(self) -> list[int]:
        """Four surfaces in four different keyword blocks."""
        blocks = self.rng.choice(self.cfg.n_blocks, size=MENTIONS_PER_TEXT, replace=False)
        return [
            int(b) + int(self.rng.integers(0, self.cfg.surfaces_per_block)) * self.cfg.n_blocks
            for b in blocks
        ]

    def make_question(
        self, surface_idxs: list[int], gold_ranks: list[int], text_type: str
    ) -> tuple[str, list[Mention]]:
        tokens: list[str] = []
        surface_positions: list[int] = []
        for i, (sidx, rank) in enumerate(zip(surface_idxs, gold_ranks)):
            pre = self._fill(3, 4)
            post = self._fill(2, 3)
            seg = pre + [self.surfaces[sidx]]
            if text_type == "a":
                seg.append(self.group_keywords[sidx][rank])
            seg += post
            surface_positions.append(len(tokens) + len(pre))
            tokens.extend(seg)
        question = " ".join(tokens)
        offsets: list[tuple[int, int]] = []
        pos = 0
        for t in tokens:
            offsets.append((pos, pos + len(t)))
            pos += len(t) + 1
        mentions = []
        for i, (sidx, rank) in enumerate(zip(surface_idxs, gold_ranks)):
            start, end = offsets[surface_positions[i]]
            mentions.append(
                Mention(
                    surface=self.surfaces[sidx],
                    unit="q",
                    start=start,
                    end=end,
                    gold=self.entities[sidx][rank],
                )
            )
        return question, mentions

    def _echo_variants(
        self, surface_idxs: list[int], gold_ranks: list[int]
    ) -> list[str]:
        """Fresh signal rewordings, up to two per mention passing the echo
        draw, so receiving pools stay signal-dense at any selection depth."""
        out = []
        for s, r in zip(surface_idxs, gold_ranks):
            for _ in range(2):
                if self.rng.random() < self.cfg.echo_prob:
                    out.append(self.signal_text(s, r))
        return out

    def make_text(self, text_id: str, text_type: str) -> CqaText:
        surface_idxs = self.pick_surfaces()
        # uniform over the candidate list for every type, so neither the
        # prior order nor its inverse is a usable shortcut
        gold_ranks = [int(r) for r in self.rng.integers(0, self.cfg.candidates_per_surface, 4)]
        question, mentions = self.make_question(surface_idxs, gold_ranks, text_type)

        signals = [self.signal_text(s, r) for s, r in zip(surface_idxs, gold_ranks)]
        # reworded duplicates: the carrying pool holds the signal twice so
        # selection ranks beyond the duplicates are near-neutral and the
        # k-sweep stays flat
        variants = [self.signal_text(s, r) for s, r in zip(surface_idxs, gold_ranks)]
        decoys = [
            self.decoy_text(surface_idxs[0:2]),
            self.decoy_text(surface_idxs[2:4]),
        ]

        if text_type == "p":
            answer_texts = signals + variants
        else:
            answer_texts = self._echo_variants(surface_idxs, gold_ranks)
            answer_texts += [self.neutral_text() for _ in range(N_ANSWERS - len(answer_texts))]

        users = [User(name=f"{text_id}_u{j}") for j in range(N_ANSWERS)]
        if text_type == "u":
            user_questions = [[signals[j], variants[j], self.neutral_text()] for j in range(4)]
            user_questions.append([decoys[0], self.neutral_text()])
            user_questions.append([decoys[1], self.neutral_text()])
            user_questions += [[self.neutral_text()] for _ in range(N_ANSWERS - 6)]
        else:
            echoed = self._echo_variants(surface_idxs, gold_ranks)
            user_questions = [[self.neutral_text()] for _ in range(N_ANSWERS)]
            for j, echo in enumerate(echoed):
                user_questions[j].insert(0, echo)
        users = [
            User(name=u.name, questions=tuple(qs)) for u, qs in zip(users, user_questions)
        ]
        answers = tuple(Answer(text=t, user=u) for t, u in zip(answer_texts, users))

        if text_type == "t":
            tag0 = [signals[0], signals[1], variants[0], variants[1], decoys[1], self.neutral_text()]
            tag1 = [signals[2], signals[3], variants[2], variants[3], decoys[0], self.neutral_text()]
        else:
            echoed = self._echo_variants(surface_idxs, gold_ranks)
            half = (len(echoed) + 1) // 2
            tag0 = echoed[:half] + [self.neutral_text() for _ in range(6 - half)]
            tag1 = echoed[half:] + [self.neutral_text() for _ in range(6 - len(echoed) + half)]
        topics = (
            TopicTag(name=f"{text_id}_tag0", questions=tuple(tag0)),
            TopicTag(name=f"{text_id}_tag1", questions=tuple(tag1)),
        )
        return CqaText(
            id=text_id,
            question=question,
            answers=answers,
            topic_tags=topics,
            mentions=tuple(mentions),
        )


def _type_sequence(cfg: SynthConfig, rng: np.random.Generator) -> list[str]:
    n_a = round(cfg.type_a_fraction * cfg.n_texts)
    rest = cfg.n_texts - n_a
    per_b, extra = divmod(rest, 3)
    types = (
        ["a"] * n_a
        + ["p"] * (per_b + (1 if extra > 0 else 0))
        + ["t"] * (per_b + (1 if extra > 1 else 0))
        + ["u"] * per_b
    )
    rng.shuffle(types)
    return types


def synth_dataset(cfg: SynthConfig | None = None) -> tuple[list[CqaText], AliasIndex]:
    """The aux-signal dataset plus its alias index."""
    cfg = cfg or SynthConfig()
    gen = _Synth(cfg)
    index = gen.build_index()
    types = _type_sequence(cfg, gen.rng)
    texts = [gen.make_text(f"z{n:04d}{tt}", tt) for n, tt in enumerate(types)]
    return texts, index


def synth_separable(n_texts: int = 40, seed: int = 0) -> tuple[list[CqaText], AliasIndex]:
    """A linearly separable corpus: gold is always the strictly-top-prior
    candidate and every pool is neutral, so the prior feature alone ranks
    perfectly (for fusion-only trainability checks)."""
    cfg = SynthConfig(n_texts=n_texts, seed=seed)
    gen = _Synth(cfg)
    index = gen.build_index()
    texts = []
    for n in range(n_texts):
        surface_idxs = gen.pick_surfaces()
        gold_ranks = [0] * MENTIONS_PER_TEXT
        question, mentions = gen.make_question(surface_idxs, gold_ranks, "b")
        users = [
            User(name=f"s{n:04d}_u{j}", questions=(gen.neutral_text(),))
            for j in range(N_ANSWERS)
        ]
        answers = tuple(Answer(text=gen.neutral_text(), user=u) for u in users)
        topics = (
            TopicTag(name=f"s{n:04d}_tag0", questions=tuple(gen.neutral_text() for _ in range(4))),
        )
        texts.append(
            CqaText(
                id=f"s{n:04d}",
                question=question,
                answers=answers,
                topic_tags=topics,
                mentions=tuple(mentions),
            )
        )
    return texts, index
