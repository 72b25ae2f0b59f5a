"""Anchor-link extraction from wikitext pages and plain-text stripping.

Only anchor links, HTML comments, and nowiki regions are interpreted; the
full MediaWiki grammar (templates, transclusion, magic words) is out of
scope.  `strip_markup` additionally applies best-effort cleanup so that
entity descriptions read as prose, but it is a scrubber, not a parser.
"""

from __future__ import annotations

import json
import logging
import re
from pathlib import Path
from typing import Iterable, Iterator

log = logging.getLogger(__name__)

DESCRIPTION_CHARS = 2000

# Unterminated regions extend to the end of the page, like MediaWiki.
_SKIP_REGION = re.compile(
    r"<!--.*?(?:-->|$)|<nowiki>.*?(?:</nowiki>|$)",
    re.DOTALL | re.IGNORECASE,
)


def _mask_skip_regions(text: str) -> str:
    """Replace comment/nowiki regions with spaces, preserving offsets."""
    return _SKIP_REGION.sub(lambda m: " " * (m.end() - m.start()), text)


def normalize_target(raw: str) -> str:
    """Canonical page title: underscores to spaces, collapsed whitespace,
    first letter upper-cased (the rest untouched)."""
    t = " ".join(raw.replace("_", " ").split())
    if not t:
        return ""
    return t[0].upper() + t[1:]


def extract_anchors(page_text: str) -> list[tuple[str, str]]:
    """All (target_entity, surface) pairs linked from a wikitext page.

    Recognizes ``[[Target]]`` (surface = raw inner text) and
    ``[[Target|surface]]``; a ``#fragment`` is stripped from the target
    only.  Links inside comments or nowiki regions are ignored.  A ``[[``
    with no closer is skipped; when links nest, the outer one is abandoned
    and scanning restarts at the inner opener.
    """
    anchors: list[tuple[str, str]] = []
    text = _mask_skip_regions(page_text)
    i = 0
    while True:
        start = text.find("[[", i)
        if start == -1:
            break
        close = text.find("]]", start + 2)
        if close == -1:
            break
        nested = text.find("[[", start + 2)
        if nested != -1 and nested < close:
            i = nested
            continue
        inner = text[start + 2 : close]
        i = close + 2
        if "\n" in inner:
            continue  # titles cannot span lines; treat as malformed
        parts = inner.split("|")
        target = normalize_target(parts[0].split("#", 1)[0])
        if not target:
            continue
        if len(parts) > 1:
            # last segment displays (image links carry option segments)
            surface = parts[-1].strip()
            if not surface:
                surface = target
        else:
            surface = inner.strip()
        if surface:
            anchors.append((target, surface))
    return anchors


_TEMPLATE_OPEN = "{{"
_TEMPLATE_CLOSE = "}}"


def _drop_templates(text: str) -> str:
    out: list[str] = []
    depth = 0
    i = 0
    n = len(text)
    while i < n:
        if text.startswith(_TEMPLATE_OPEN, i):
            depth += 1
            i += 2
        elif text.startswith(_TEMPLATE_CLOSE, i) and depth > 0:
            depth -= 1
            i += 2
        else:
            if depth == 0:
                out.append(text[i])
            i += 1
    return "".join(out)


_ANCHOR = re.compile(r"\[\[([^\[\]\n]*)\]\]")
_EXTERNAL_LABELED = re.compile(r"\[\w+://\S*\s+([^\]]*)\]")
_EXTERNAL_BARE = re.compile(r"\[\w+://[^\]]*\]")
_REF = re.compile(r"<ref[^>]*/>|<ref[^>]*>.*?</ref>", re.DOTALL | re.IGNORECASE)
_TAG = re.compile(r"<[^>]+>")
_HEADING = re.compile(r"^=+\s*(.*?)\s*=+\s*$", re.MULTILINE)
_LIST_MARKER = re.compile(r"^[*#:;]+\s*", re.MULTILINE)


def _anchor_display(m: re.Match) -> str:
    inner = m.group(1)
    if "|" in inner:
        return inner.rsplit("|", 1)[1]
    return inner


def strip_markup(page_text: str) -> str:
    """Plain display text of a page, whitespace-collapsed.

    Comments and nowiki regions are dropped, anchors are replaced by their
    surface text, and templates, refs, external-link brackets, quote runs,
    heading markers, and stray tags are scrubbed out.
    """
    text = _SKIP_REGION.sub(" ", page_text)
    text = _REF.sub(" ", text)
    text = _drop_templates(text)
    text = _ANCHOR.sub(_anchor_display, text)
    text = _EXTERNAL_LABELED.sub(lambda m: m.group(1), text)
    text = _EXTERNAL_BARE.sub(" ", text)
    text = _TAG.sub(" ", text)
    text = _HEADING.sub(lambda m: m.group(1), text)
    text = _LIST_MARKER.sub("", text)
    text = text.replace("'''", "").replace("''", "")
    return " ".join(text.split())


def description_text(page_text: str, max_chars: int = DESCRIPTION_CHARS) -> str:
    """Entity description: leading slice of the stripped page text."""
    return strip_markup(page_text)[:max_chars]


def iter_pages(path: str | Path) -> Iterator[tuple[str, str]]:
    """Yield (title, text) pairs from a JSON-lines page file."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                title = obj["title"]
                text = obj["text"]
            except (json.JSONDecodeError, KeyError, TypeError):
                log.warning("%s: line %d is not a {title, text} record, skipped", path, line_no)
                continue
            if isinstance(title, str) and isinstance(text, str):
                yield (title, text)
            else:
                log.warning("%s: line %d has non-string title/text, skipped", path, line_no)


def pages_to_descriptions(pages: Iterable[tuple[str, str]]) -> dict[str, str]:
    """Description map keyed by normalized title."""
    return {normalize_target(title): description_text(text) for title, text in pages}
