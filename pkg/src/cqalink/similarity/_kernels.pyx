# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: language_level=3
"""Compiled string similarity kernels.

Mirrors cqalink.similarity._pure exactly; operates on arrays of Unicode
code points so the hot loops run without the GIL.
"""

from libc.stdlib cimport free, malloc

ctypedef unsigned int u32


cdef struct Match:
    Py_ssize_t i
    Py_ssize_t j
    Py_ssize_t size


cdef Match _longest_match(const u32* a, const u32* b,
                          Py_ssize_t alo, Py_ssize_t ahi,
                          Py_ssize_t blo, Py_ssize_t bhi,
                          Py_ssize_t* lengths) nogil:
    # lengths is a scratch buffer of at least 2*(bhi-blo+1) entries
    cdef Match best
    cdef Py_ssize_t nb = bhi - blo
    cdef Py_ssize_t i, j, size
    cdef Py_ssize_t* prev = lengths
    cdef Py_ssize_t* cur = lengths + nb + 1
    cdef Py_ssize_t* tmp
    cdef u32 ca
    best.i = alo
    best.j = blo
    best.size = 0
    for j in range(nb + 1):
        prev[j] = 0
        cur[j] = 0
    for i in range(alo, ahi):
        ca = a[i]
        for j in range(blo, bhi):
            if ca == b[j]:
                size = prev[j - blo] + 1
                cur[j - blo + 1] = size
                if size > best.size:
                    best.size = size
                    best.i = i - size + 1
                    best.j = j - size + 1
            else:
                cur[j - blo + 1] = 0
        tmp = prev
        prev = cur
        cur = tmp
        for j in range(nb + 1):
            cur[j] = 0
    return best


def matched_characters(const u32[:] a, const u32[:] b):
    """Total characters matched by recursive longest-common-substring decomposition."""
    cdef Py_ssize_t la = a.shape[0]
    cdef Py_ssize_t lb = b.shape[0]
    if la == 0 or lb == 0:
        return 0
    cdef const u32* pa = &a[0]
    cdef const u32* pb = &b[0]
    # Each match splits the problem in two, so the pending-segment stack never
    # holds more than len(a)+len(b)+2 entries of four indices.
    cdef Py_ssize_t cap = 4 * (la + lb + 4)
    cdef Py_ssize_t* stack = <Py_ssize_t*> malloc(cap * sizeof(Py_ssize_t))
    cdef Py_ssize_t* scratch = <Py_ssize_t*> malloc(2 * (lb + 2) * sizeof(Py_ssize_t))
    if stack == NULL or scratch == NULL:
        free(stack)
        free(scratch)
        raise MemoryError()
    cdef Py_ssize_t total = 0
    cdef Py_ssize_t top = 0
    cdef Py_ssize_t alo, ahi, blo, bhi
    cdef Match m
    with nogil:
        stack[0] = 0
        stack[1] = la
        stack[2] = 0
        stack[3] = lb
        top = 4
        while top > 0:
            top -= 4
            alo = stack[top]
            ahi = stack[top + 1]
            blo = stack[top + 2]
            bhi = stack[top + 3]
            if alo >= ahi or blo >= bhi:
                continue
            m = _longest_match(pa, pb, alo, ahi, blo, bhi, scratch)
            if m.size == 0:
                continue
            total += m.size
            stack[top] = alo
            stack[top + 1] = m.i
            stack[top + 2] = blo
            stack[top + 3] = m.j
            top += 4
            stack[top] = m.i + m.size
            stack[top + 1] = ahi
            stack[top + 2] = m.j + m.size
            stack[top + 3] = bhi
            top += 4
    free(stack)
    free(scratch)
    return total


def levenshtein_distance(const u32[:] a, const u32[:] b):
    """Unit-cost edit distance (insert, delete, substitute)."""
    cdef Py_ssize_t la = a.shape[0]
    cdef Py_ssize_t lb = b.shape[0]
    if la == 0:
        return lb
    if lb == 0:
        return la
    cdef const u32* pa
    cdef const u32* pb
    if la < lb:
        pa = &b[0]
        pb = &a[0]
        la, lb = lb, la
    else:
        pa = &a[0]
        pb = &b[0]
    cdef Py_ssize_t* buf = <Py_ssize_t*> malloc(2 * (lb + 1) * sizeof(Py_ssize_t))
    if buf == NULL:
        raise MemoryError()
    cdef Py_ssize_t* prev = buf
    cdef Py_ssize_t* cur = buf + lb + 1
    cdef Py_ssize_t* tmp
    cdef Py_ssize_t i, j, cost, best, cand
    cdef Py_ssize_t result
    with nogil:
        for j in range(lb + 1):
            prev[j] = j
        for i in range(1, la + 1):
            cur[0] = i
            for j in range(1, lb + 1):
                cost = 0 if pa[i - 1] == pb[j - 1] else 1
                best = prev[j] + 1
                cand = cur[j - 1] + 1
                if cand < best:
                    best = cand
                cand = prev[j - 1] + cost
                if cand < best:
                    best = cand
                cur[j] = best
            tmp = prev
            prev = cur
            cur = tmp
        result = prev[lb]
    free(buf)
    return result


def jaro_winkler(const u32[:] a, const u32[:] b):
    """Jaro similarity with the unconditional Winkler prefix boost (prefix <= 4)."""
    cdef Py_ssize_t la = a.shape[0]
    cdef Py_ssize_t lb = b.shape[0]
    if la == 0 and lb == 0:
        return 1.0
    if la == 0 or lb == 0:
        return 0.0
    cdef const u32* pa = &a[0]
    cdef const u32* pb = &b[0]
    cdef Py_ssize_t window = (la if la > lb else lb) // 2 - 1
    if window < 0:
        window = 0
    cdef char* flags = <char*> malloc(la + lb)
    if flags == NULL:
        raise MemoryError()
    cdef char* a_flags = flags
    cdef char* b_flags = flags + la
    cdef Py_ssize_t i, j, lo, hi, k, prefix, cap
    cdef Py_ssize_t matches = 0
    cdef Py_ssize_t half_transpositions = 0
    cdef double t, m, jaro, result
    with nogil:
        for i in range(la + lb):
            flags[i] = 0
        for i in range(la):
            lo = i - window if i > window else 0
            hi = i + window + 1
            if hi > lb:
                hi = lb
            for j in range(lo, hi):
                if b_flags[j] == 0 and pa[i] == pb[j]:
                    a_flags[i] = 1
                    b_flags[j] = 1
                    matches += 1
                    break
        if matches == 0:
            result = 0.0
        else:
            k = 0
            for i in range(la):
                if a_flags[i]:
                    while b_flags[k] == 0:
                        k += 1
                    if pa[i] != pb[k]:
                        half_transpositions += 1
                    k += 1
            t = half_transpositions / 2.0
            m = <double> matches
            jaro = (m / la + m / lb + (m - t) / m) / 3.0
            prefix = 0
            cap = la if la < lb else lb
            if cap > 4:
                cap = 4
            for i in range(cap):
                if pa[i] != pb[i]:
                    break
                prefix += 1
            result = jaro + prefix * 0.1 * (1.0 - jaro)
    free(flags)
    return result
