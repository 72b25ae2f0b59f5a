"""Alias dictionary: mention surface -> candidate entities with priors.

Counts come from anchor links in wikitext pages (or a precomputed TSV);
the prior p(e|m) for a surface m is the fraction of its anchor links that
point to entity e.  Priors are global to the surface and are never
renormalized downstream, so pruned candidate sets keep their true priors.

The on-disk format is a versioned little-endian binary with a magic
header, length-prefixed records, and a trailing sha256 checksum.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import struct
import unicodedata
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

from .wikitext import extract_anchors

log = logging.getLogger(__name__)

MAGIC = b"CQALIDX\x00"
VERSION = 1
PRIOR_TOLERANCE = 1e-9
_MAX_REDIRECT_HOPS = 8


class IndexFormatError(Exception):
    """The file is not a readable alias index of this version."""


class ChecksumError(IndexFormatError):
    pass


class VersionError(IndexFormatError):
    pass


def normalize_surface(surface: str) -> str:
    """Index key for a surface: NFC, lowercase, collapsed whitespace,
    leading/trailing punctuation stripped."""
    s = unicodedata.normalize("NFC", surface).lower()
    s = " ".join(s.split())
    while s:
        changed = False
        while s and unicodedata.category(s[0]).startswith("P"):
            s = s[1:]
            changed = True
        while s and unicodedata.category(s[-1]).startswith("P"):
            s = s[:-1]
            changed = True
        stripped = s.strip()
        changed = changed or stripped != s
        s = stripped
        if not changed:
            break
    return s


@dataclass(frozen=True)
class AliasEntry:
    entity: str
    count: int
    prior: float


class AliasIndex:
    """Immutable surface -> candidates table plus entity descriptions."""

    def __init__(
        self,
        table: Mapping[str, tuple[AliasEntry, ...]],
        descriptions: Mapping[str, str],
    ):
        self._table = dict(table)
        self._descriptions = dict(descriptions)

    def candidates_for(self, surface: str) -> tuple[AliasEntry, ...]:
        """Candidates for a raw surface, best prior first; empty if unknown."""
        return self._table.get(normalize_surface(surface), ())

    def description(self, entity: str) -> str:
        return self._descriptions.get(entity, "")

    @property
    def surfaces(self) -> list[str]:
        return sorted(self._table)

    @property
    def entities(self) -> list[str]:
        return sorted(self._descriptions)

    def __len__(self) -> int:
        return len(self._table)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AliasIndex):
            return NotImplemented
        return self._table == other._table and self._descriptions == other._descriptions

    def __repr__(self) -> str:
        return f"AliasIndex({len(self._table)} surfaces, {len(self._descriptions)} entities)"


def _entries_from_counts(counts: Mapping[str, int]) -> tuple[AliasEntry, ...]:
    kept = {e: c for e, c in counts.items() if c > 0}
    total = sum(kept.values())
    if total == 0:
        return ()
    entries = [AliasEntry(e, c, c / total) for e, c in kept.items()]
    entries.sort(key=lambda x: (-x.prior, x.entity))
    return tuple(entries)


def _resolve_redirect(target: str, redirects: Mapping[str, str]) -> str:
    seen = {target}
    for _ in range(_MAX_REDIRECT_HOPS):
        nxt = redirects.get(target)
        if nxt is None or nxt in seen:
            return target
        seen.add(nxt)
        target = nxt
    return target


class AliasIndexBuilder:
    """Accumulates (surface, entity) anchor counts; builders merge, so the
    page stream can be split across workers and combined afterwards."""

    def __init__(self):
        self._counts: dict[str, dict[str, int]] = {}

    def add_anchor(self, target: str, surface: str, count: int = 1) -> None:
        key = normalize_surface(surface)
        if not key or not target or count <= 0:
            return
        by_entity = self._counts.setdefault(key, {})
        by_entity[target] = by_entity.get(target, 0) + count

    def add_page(self, page_text: str) -> None:
        for target, surface in extract_anchors(page_text):
            self.add_anchor(target, surface)

    def add_counts_tsv(self, path: str | Path) -> None:
        """Rows of `surface<TAB>entity<TAB>count`, bypassing extraction."""
        path = Path(path)
        with path.open("r", encoding="utf-8") as f:
            for line_no, line in enumerate(f, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 3:
                    raise ValueError(f"{path}: line {line_no}: expected 3 tab-separated fields")
                surface, entity, count_text = parts
                try:
                    count = int(count_text)
                except ValueError:
                    raise ValueError(f"{path}: line {line_no}: count {count_text!r} is not an integer")
                if count < 0:
                    raise ValueError(f"{path}: line {line_no}: negative count")
                self.add_anchor(target=entity, surface=surface, count=count)

    def merge(self, other: "AliasIndexBuilder") -> "AliasIndexBuilder":
        for surface, by_entity in other._counts.items():
            mine = self._counts.setdefault(surface, {})
            for entity, count in by_entity.items():
                mine[entity] = mine.get(entity, 0) + count
        return self

    def build(
        self,
        descriptions: Mapping[str, str] | None = None,
        redirects: Mapping[str, str] | None = None,
    ) -> AliasIndex:
        descriptions = descriptions or {}
        table: dict[str, tuple[AliasEntry, ...]] = {}
        entities: set[str] = set()
        for surface, by_entity in self._counts.items():
            if redirects:
                resolved: dict[str, int] = {}
                for entity, count in by_entity.items():
                    canonical = _resolve_redirect(entity, redirects)
                    resolved[canonical] = resolved.get(canonical, 0) + count
                by_entity = resolved
            entries = _entries_from_counts(by_entity)
            if entries:
                table[surface] = entries
                entities.update(e.entity for e in entries)
        desc_out: dict[str, str] = {}
        for entity in sorted(entities):
            text = descriptions.get(entity, "")
            if not text:
                log.warning("no description for entity %r, storing empty text", entity)
            desc_out[entity] = text
        return AliasIndex(table, desc_out)


def build_alias_index(
    pages: Iterable[str],
    descriptions: Mapping[str, str] | None = None,
    redirects: Mapping[str, str] | None = None,
) -> AliasIndex:
    """Build the index from a stream of wikitext page bodies."""
    builder = AliasIndexBuilder()
    for page_text in pages:
        builder.add_page(page_text)
    return builder.build(descriptions=descriptions, redirects=redirects)


def _write_str(buf: io.BytesIO, s: str) -> None:
    data = s.encode("utf-8")
    buf.write(struct.pack("<I", len(data)))
    buf.write(data)


class _Reader:
    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0

    def take(self, n: int) -> bytes:
        if self._pos + n > len(self._data):
            raise IndexFormatError("unexpected end of index data")
        chunk = self._data[self._pos : self._pos + n]
        self._pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]

    def string(self) -> str:
        return self.take(self.u32()).decode("utf-8")

    def done(self) -> bool:
        return self._pos == len(self._data)


def save_index(index: AliasIndex, path: str | Path) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    header = json.dumps(
        {"surfaces": len(index._table), "entities": len(index._descriptions)},
        sort_keys=True,
    ).encode("utf-8")
    buf.write(struct.pack("<I", len(header)))
    buf.write(header)
    for surface in sorted(index._table):
        _write_str(buf, surface)
        entries = index._table[surface]
        buf.write(struct.pack("<I", len(entries)))
        for e in entries:
            _write_str(buf, e.entity)
            buf.write(struct.pack("<Q", e.count))
            buf.write(struct.pack("<d", e.prior))
    buf.write(struct.pack("<I", len(index._descriptions)))
    for entity in sorted(index._descriptions):
        _write_str(buf, entity)
        _write_str(buf, index._descriptions[entity])
    payload = buf.getvalue()
    digest = hashlib.sha256(payload).digest()
    Path(path).write_bytes(payload + digest)


def load_index(path: str | Path) -> AliasIndex:
    """Load and verify an index: checksum, magic, version, and stored
    priors re-derived from counts."""
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 4 + 32:
        raise IndexFormatError(f"{path}: file too short to be an alias index")
    payload, digest = data[:-32], data[-32:]
    if hashlib.sha256(payload).digest() != digest:
        raise ChecksumError(f"{path}: checksum mismatch (truncated or corrupt)")
    r = _Reader(payload)
    if r.take(len(MAGIC)) != MAGIC:
        raise IndexFormatError(f"{path}: bad magic, not an alias index")
    version = r.u32()
    if version != VERSION:
        raise VersionError(f"{path}: index version {version}, expected {VERSION}")
    header = json.loads(r.string())
    table: dict[str, tuple[AliasEntry, ...]] = {}
    for _ in range(header["surfaces"]):
        surface = r.string()
        n = r.u32()
        entries = []
        for _ in range(n):
            entity = r.string()
            count = r.u64()
            prior = r.f64()
            entries.append(AliasEntry(entity, count, prior))
        total = sum(e.count for e in entries)
        for e in entries:
            expected = e.count / total if total else 0.0
            if abs(expected - e.prior) > PRIOR_TOLERANCE:
                raise IndexFormatError(
                    f"{path}: stored prior {e.prior} for {surface!r}->{e.entity!r} "
                    f"disagrees with counts ({expected})"
                )
        table[surface] = tuple(entries)
    n_descriptions = r.u32()
    if n_descriptions != header["entities"]:
        raise IndexFormatError(
            f"{path}: header claims {header['entities']} entities, "
            f"records hold {n_descriptions}"
        )
    descriptions: dict[str, str] = {}
    for _ in range(n_descriptions):
        entity = r.string()
        descriptions[entity] = r.string()
    if not r.done():
        raise IndexFormatError(f"{path}: trailing bytes after index records")
    return AliasIndex(table, descriptions)


def export_tsv(index: AliasIndex, path: str | Path) -> None:
    """Full alias table as `surface<TAB>entity<TAB>count` rows."""
    with Path(path).open("w", encoding="utf-8") as f:
        for surface in sorted(index._table):
            for e in index._table[surface]:
                f.write(f"{surface}\t{e.entity}\t{e.count}\n")
