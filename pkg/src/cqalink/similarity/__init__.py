"""String similarity measures used for useful-text selection.

Three measures, each in [0, 1] and symmetric:

* ``ratcliff_obershelp`` -- 2*K/(|a|+|b|) where K counts characters matched
  by recursive longest-common-substring decomposition (no junk heuristics).
  The pair is canonicalized to lexicographic order before decomposition and
  ties go to the smallest start in the first string, then in the second;
  resolving ties on the raw argument order would break symmetry (K can
  differ between orders when several longest substrings overlap).
* ``jaro_winkler`` -- Jaro similarity with the standard match window
  floor(max(|a|,|b|)/2)-1 and the Winkler prefix boost.
* ``levenshtein_ratio`` -- 1 - D/max(|a|,|b|) by default; the indel variant
  (|a|+|b|-D2)/(|a|+|b|) with substitution cost 2 is available via
  ``mode="indel"`` for comparison with other toolkits.

The hot loops have a compiled backend (``_kernels``, built from Cython)
with a pure-Python fallback selected at import.  Set CQALINK_SIMILARITY=pure
to force the fallback; ``backend_name()`` reports which one is active.
"""

from __future__ import annotations

import os

import numpy as np

from . import _pure

try:  # compiled kernels are optional
    from . import _kernels
except ImportError:  # pragma: no cover - depends on build environment
    _kernels = None

if os.environ.get("CQALINK_SIMILARITY", "").lower() == "pure":
    _active = None
else:
    _active = _kernels

__all__ = [
    "backend_name",
    "ratcliff_obershelp",
    "jaro_winkler",
    "levenshtein_ratio",
    "levenshtein_distance",
]


def backend_name() -> str:
    """Name of the backend in use: "compiled" or "pure"."""
    return "compiled" if _active is not None else "pure"


def _codepoints(s: str) -> np.ndarray:
    return np.frombuffer(s.encode("utf-32-le"), dtype=np.uint32)


def ratcliff_obershelp(a: str, b: str) -> float:
    total = len(a) + len(b)
    if total == 0:
        return 1.0
    if b < a:
        a, b = b, a
    if _active is not None:
        matched = _active.matched_characters(_codepoints(a), _codepoints(b))
    else:
        matched = _pure.matched_characters(a, b)
    return 2.0 * matched / total


def jaro_winkler(a: str, b: str) -> float:
    if _active is not None:
        return _active.jaro_winkler(_codepoints(a), _codepoints(b))
    return _pure.jaro_winkler(a, b)


def levenshtein_distance(a: str, b: str) -> int:
    if _active is not None:
        return _active.levenshtein_distance(_codepoints(a), _codepoints(b))
    return _pure.levenshtein_distance(a, b)


def levenshtein_ratio(a: str, b: str, mode: str = "max") -> float:
    """Normalized edit similarity.

    mode="max":   1 - D/max(|a|,|b|) with unit-cost D (the default).
    mode="indel": (|a|+|b|-D2)/(|a|+|b|) where D2 uses substitution cost 2,
                  i.e. the longest-common-subsequence ratio.
    """
    la, lb = len(a), len(b)
    if la == 0 and lb == 0:
        return 1.0
    if mode == "max":
        return 1.0 - levenshtein_distance(a, b) / max(la, lb)
    if mode == "indel":
        # D2 = la + lb - 2*LCS, so the ratio reduces to 2*LCS/(la+lb)
        lcs = _lcs_length(a, b)
        return 2.0 * lcs / (la + lb)
    raise ValueError(f"unknown levenshtein mode: {mode!r}")


def _lcs_length(a: str, b: str) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for ca in a:
        cur = [0]
        for j, cb in enumerate(b, start=1):
            if ca == cb:
                cur.append(prev[j - 1] + 1)
            else:
                cur.append(max(prev[j], cur[j - 1]))
        prev = cur
    return prev[len(b)]
