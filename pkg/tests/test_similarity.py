"""String-similarity kernels: frozen values, independent oracles, properties,
and exact agreement between the compiled and pure backends."""

from __future__ import annotations

import difflib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cqalink import similarity
from cqalink.similarity import (
    _pure,
    backend_name,
    jaro_winkler,
    levenshtein_distance,
    levenshtein_ratio,
    ratcliff_obershelp,
)

_text = st.text(max_size=40)
_short = st.text(
    alphabet=st.characters(min_codepoint=32, max_codepoint=0x2FF), max_size=24
)


# ---------------------------------------------------------------- oracles


def _lev_oracle(a: str, b: str) -> int:
    """Full-matrix dynamic program, kept independent of the shipped kernel."""
    la, lb = len(a), len(b)
    d = [[0] * (lb + 1) for _ in range(la + 1)]
    for i in range(la + 1):
        d[i][0] = i
    for j in range(lb + 1):
        d[0][j] = j
    for i in range(1, la + 1):
        for j in range(1, lb + 1):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            d[i][j] = min(d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + cost)
    return d[la][lb]


def _jw_oracle(a: str, b: str) -> float:
    """Definition-level Jaro-Winkler built around explicit match index lists."""
    la, lb = len(a), len(b)
    if la == 0 and lb == 0:
        return 1.0
    if la == 0 or lb == 0:
        return 0.0
    window = max(0, max(la, lb) // 2 - 1)
    taken = [False] * lb
    a_hits, b_hits = [], []
    for i, ch in enumerate(a):
        for j in range(max(0, i - window), min(lb, i + window + 1)):
            if not taken[j] and b[j] == ch:
                taken[j] = True
                a_hits.append(i)
                b_hits.append(j)
                break
    m = len(a_hits)
    if m == 0:
        return 0.0
    matched_b = [b[j] for j in sorted(b_hits)]
    half_t = sum(1 for i, j in zip(a_hits, range(m)) if a[i] != matched_b[j])
    jaro = (m / la + m / lb + (m - half_t / 2.0) / m) / 3.0
    prefix = 0
    for ca, cb in zip(a[:4], b[:4]):
        if ca != cb:
            break
        prefix += 1
    return jaro + prefix * 0.1 * (1.0 - jaro)


def _ro_oracle(a: str, b: str) -> float:
    # difflib implements the same recursive longest-common-substring
    # decomposition with the same earliest-start tie rule; autojunk never
    # fires below 200 elements
    if not a and not b:
        return 1.0
    x, y = sorted((a, b))
    return difflib.SequenceMatcher(None, x, y).ratio()


# ---------------------------------------------------------------- frozen values


def test_jaro_winkler_reference_pairs():
    assert jaro_winkler("MARTHA", "MARHTA") == pytest.approx(0.9611111111111111, abs=1e-12)
    assert jaro_winkler("DWAYNE", "DUANE") == pytest.approx(0.84, abs=1e-9)
    assert jaro_winkler("DIXON", "DICKSONX") == pytest.approx(0.8133333333333332, abs=1e-9)
    assert jaro_winkler("abc", "xyz") == 0.0
    assert jaro_winkler("", "") == 1.0
    assert jaro_winkler("a", "") == 0.0


def test_levenshtein_reference_pairs():
    assert levenshtein_distance("kitten", "sitting") == 3
    assert levenshtein_distance("flaw", "lawn") == 2
    assert levenshtein_distance("", "abc") == 3
    assert levenshtein_distance("abc", "abc") == 0
    assert levenshtein_ratio("kitten", "sitting") == pytest.approx(4.0 / 7.0, abs=1e-12)
    assert levenshtein_ratio("", "") == 1.0
    assert levenshtein_ratio("", "xy") == 0.0


def test_levenshtein_indel_mode():
    # substitution cost 2 reduces to the LCS ratio: LCS(kitten, sitting) = 4
    assert levenshtein_ratio("kitten", "sitting", mode="indel") == pytest.approx(
        8.0 / 13.0, abs=1e-12
    )
    assert levenshtein_ratio("abc", "abc", mode="indel") == 1.0
    with pytest.raises(ValueError):
        levenshtein_ratio("a", "b", mode="bogus")


def test_ratcliff_obershelp_reference_pairs():
    assert ratcliff_obershelp("abcd", "bcde") == 0.75
    assert ratcliff_obershelp("", "") == 1.0
    assert ratcliff_obershelp("ab", "") == 0.0
    assert ratcliff_obershelp("same", "same") == 1.0


# ---------------------------------------------------------------- properties


@settings(max_examples=300, deadline=None)
@given(_text, _text)
def test_levenshtein_matches_full_matrix_oracle(a, b):
    assert levenshtein_distance(a, b) == _lev_oracle(a, b)


@settings(max_examples=300, deadline=None)
@given(_text, _text)
def test_jaro_winkler_matches_definition_oracle(a, b):
    assert jaro_winkler(a, b) == pytest.approx(_jw_oracle(a, b), abs=1e-12)


@settings(max_examples=300, deadline=None)
@given(_text, _text)
def test_ratcliff_obershelp_matches_difflib_oracle(a, b):
    assert ratcliff_obershelp(a, b) == pytest.approx(_ro_oracle(a, b), abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(_text, _text, _text)
def test_levenshtein_is_a_metric(a, b, c):
    dab = levenshtein_distance(a, b)
    assert dab == levenshtein_distance(b, a)
    assert (dab == 0) == (a == b)
    assert abs(len(a) - len(b)) <= dab <= max(len(a), len(b))
    assert levenshtein_distance(a, c) <= dab + levenshtein_distance(b, c)


@settings(max_examples=200, deadline=None)
@given(_text, _text)
def test_similarities_are_symmetric_unit_interval(a, b):
    for fn in (jaro_winkler, levenshtein_ratio, ratcliff_obershelp):
        s = fn(a, b)
        assert fn(b, a) == s
        assert 0.0 <= s <= 1.0
        assert fn(a, a) == 1.0


# ---------------------------------------------------------------- backends


def _cp(s: str) -> np.ndarray:
    return np.frombuffer(s.encode("utf-32-le"), dtype=np.uint32)


@pytest.fixture(scope="module")
def kernels():
    if similarity._kernels is None:
        pytest.skip("compiled kernels not built")
    return similarity._kernels


def test_backend_name_reports_active_module():
    assert backend_name() in ("compiled", "pure")


@settings(max_examples=500, deadline=None)
@given(_short, _short)
def test_compiled_equals_pure(kernels, a, b):
    x, y = sorted((a, b))
    assert kernels.matched_characters(_cp(x), _cp(y)) == _pure.matched_characters(x, y)
    assert kernels.levenshtein_distance(_cp(a), _cp(b)) == _pure.levenshtein_distance(a, b)
    assert kernels.jaro_winkler(_cp(a), _cp(b)) == _pure.jaro_winkler(a, b)


def test_pure_backend_env_switch():
    import os
    import subprocess
    import sys

    code = (
        "from cqalink import similarity; "
        "print(similarity.backend_name()); "
        "print(similarity.jaro_winkler('MARTHA', 'MARHTA'))"
    )
    out = subprocess.run(
        [sys.executable, "-c", code],
        env={**os.environ, "CQALINK_SIMILARITY": "pure"},
        capture_output=True,
        text=True,
        check=True,
    ).stdout.split()
    assert out[0] == "pure"
    assert abs(float(out[1]) - 0.9611111111111111) < 1e-12
