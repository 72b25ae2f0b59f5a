"""Deterministic word-level tokenizer with reserved special tokens.

The vocabulary is learned by frequency over a training corpus on top of a
fixed block of special tokens whose ids never move: padding, unknown, the
pair-layout tokens [cls]/[sep], the aux-layout tokens <s> </s> <d> </d>
<q> </q>, and the mention boundary markers <m> </m>.
"""

from __future__ import annotations

import json
import re
import unicodedata
from collections import Counter
from pathlib import Path
from typing import Iterable

import numpy as np

PAD = "[pad]"
UNK = "[unk]"
CLS = "[cls]"
SEP = "[sep]"
S = "<s>"
SLASH_S = "</s>"
D = "<d>"
SLASH_D = "</d>"
Q = "<q>"
SLASH_Q = "</q>"
M = "<m>"
SLASH_M = "</m>"

SPECIALS = (PAD, UNK, CLS, SEP, S, SLASH_S, D, SLASH_D, Q, SLASH_Q, M, SLASH_M)
_SPECIAL_IDS = {tok: i for i, tok in enumerate(SPECIALS)}
_SPECIAL_SET = frozenset(SPECIALS)

# specials first so they never fragment into punctuation + word pieces
_TOKEN = re.compile(r"\[cls\]|\[sep\]|\[pad\]|\[unk\]|</?[sdqm]>|\w+|[^\w\s]")


def tokenize(text: str) -> list[str]:
    """Word-level tokens of NFC-lowercased text; specials stay atomic."""
    text = unicodedata.normalize("NFC", text).lower()
    return _TOKEN.findall(text)


class Tokenizer:
    def __init__(self, id_to_token: list[str]):
        for tok, i in _SPECIAL_IDS.items():
            if i >= len(id_to_token) or id_to_token[i] != tok:
                raise ValueError(f"special token {tok!r} must have id {i}")
        if len(set(id_to_token)) != len(id_to_token):
            raise ValueError("duplicate tokens in vocabulary")
        self._id_to_token = list(id_to_token)
        self._token_to_id = {tok: i for i, tok in enumerate(id_to_token)}
        self.pad_id = _SPECIAL_IDS[PAD]
        self.unk_id = _SPECIAL_IDS[UNK]

    @classmethod
    def build(cls, texts: Iterable[str], vocab_size: int = 8192) -> "Tokenizer":
        """Learn the vocabulary: specials plus the (vocab_size - #specials)
        most frequent tokens, ties broken lexicographically."""
        if vocab_size <= len(SPECIALS):
            raise ValueError(f"vocab_size must exceed {len(SPECIALS)} special tokens")
        counts: Counter[str] = Counter()
        for text in texts:
            counts.update(t for t in tokenize(text) if t not in _SPECIAL_SET)
        budget = vocab_size - len(SPECIALS)
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:budget]
        return cls(list(SPECIALS) + [tok for tok, _ in ranked])

    @property
    def vocab_size(self) -> int:
        return len(self._id_to_token)

    def id_of(self, token: str) -> int:
        return self._token_to_id.get(token, self.unk_id)

    def token_of(self, token_id: int) -> str:
        return self._id_to_token[token_id]

    def encode_tokens(self, tokens: list[str]) -> np.ndarray:
        return np.array([self.id_of(t) for t in tokens], dtype=np.int32)

    def encode(self, text: str) -> np.ndarray:
        return self.encode_tokens(tokenize(text))

    def save(self, path: str | Path) -> None:
        payload = {"version": 1, "tokens": self._id_to_token}
        Path(path).write_text(json.dumps(payload, ensure_ascii=False), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Tokenizer":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if payload.get("version") != 1:
            raise ValueError(f"{path}: unsupported tokenizer version {payload.get('version')!r}")
        return cls(payload["tokens"])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Tokenizer):
            return NotImplemented
        return self._id_to_token == other._id_to_token
