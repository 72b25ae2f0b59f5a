"""Pure-Python string similarity primitives.

Reference implementations of the three kernels; the compiled module in
``_kernels.pyx`` mirrors these exactly.  All three operate on raw
character sequences and are symmetric in their arguments.
"""

from __future__ import annotations

__all__ = ["matched_characters", "levenshtein_distance", "jaro_winkler"]


def _longest_match(a: str, b: str, alo: int, ahi: int, blo: int, bhi: int):
    """Longest common substring of a[alo:ahi] and b[blo:bhi].

    Returns (i, j, size) with the match starting at a[i] and b[j].  Ties on
    size are broken by the smallest i, then the smallest j.
    """
    best_size = 0
    best_i = alo
    best_j = blo
    # lengths[j] = length of the common suffix ending at a[i], b[j]
    nb = bhi - blo
    prev = [0] * (nb + 1)
    cur = [0] * (nb + 1)
    for i in range(alo, ahi):
        ca = a[i]
        for j in range(blo, bhi):
            if ca == b[j]:
                size = prev[j - blo] + 1
                cur[j - blo + 1] = size
                if size > best_size:
                    best_size = size
                    best_i = i - size + 1
                    best_j = j - size + 1
            else:
                cur[j - blo + 1] = 0
        prev, cur = cur, prev
        for j in range(nb + 1):
            cur[j] = 0
    return best_i, best_j, best_size


def matched_characters(a: str, b: str) -> int:
    """Total characters matched by recursive longest-common-substring decomposition."""
    total = 0
    stack = [(0, len(a), 0, len(b))]
    while stack:
        alo, ahi, blo, bhi = stack.pop()
        if alo >= ahi or blo >= bhi:
            continue
        i, j, size = _longest_match(a, b, alo, ahi, blo, bhi)
        if size == 0:
            continue
        total += size
        stack.append((alo, i, blo, j))
        stack.append((i + size, ahi, j + size, bhi))
    return total


def levenshtein_distance(a: str, b: str) -> int:
    """Unit-cost edit distance (insert, delete, substitute)."""
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    cur = [0] * (len(b) + 1)
    for i, ca in enumerate(a, start=1):
        cur[0] = i
        for j, cb in enumerate(b, start=1):
            cost = 0 if ca == cb else 1
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost)
        prev, cur = cur, prev
    return prev[len(b)]


def jaro_winkler(a: str, b: str) -> float:
    """Jaro similarity with the Winkler common-prefix boost.

    Match window is floor(max(|a|,|b|)/2) - 1 (never below zero) and
    transpositions are counted as half the number of out-of-order matched
    pairs.  The prefix boost J + l*0.1*(1-J) is applied unconditionally
    with the common prefix length l capped at 4.
    """
    la, lb = len(a), len(b)
    if la == 0 and lb == 0:
        return 1.0
    if la == 0 or lb == 0:
        return 0.0
    window = max(la, lb) // 2 - 1
    if window < 0:
        window = 0
    a_flags = [False] * la
    b_flags = [False] * lb
    matches = 0
    for i in range(la):
        lo = i - window if i > window else 0
        hi = i + window + 1
        if hi > lb:
            hi = lb
        for j in range(lo, hi):
            if not b_flags[j] and a[i] == b[j]:
                a_flags[i] = True
                b_flags[j] = True
                matches += 1
                break
    if matches == 0:
        return 0.0
    half_transpositions = 0
    k = 0
    for i in range(la):
        if a_flags[i]:
            while not b_flags[k]:
                k += 1
            if a[i] != b[k]:
                half_transpositions += 1
            k += 1
    t = half_transpositions / 2.0
    m = float(matches)
    jaro = (m / la + m / lb + (m - t) / m) / 3.0
    prefix = 0
    for i in range(min(la, lb, 4)):
        if a[i] != b[i]:
            break
        prefix += 1
    return jaro + prefix * 0.1 * (1.0 - jaro)
