# cython: language_level=3
"""Compiled placement kernels; same contract as ``_kernels_py``."""
from libc.stdlib cimport malloc, free as cfree

cdef enum:
    WIDTH = 3


cdef long long* _copy(seq, Py_ssize_t n) except NULL:
    cdef long long* buf = <long long*> malloc((n if n > 0 else 1) * sizeof(long long))
    if buf == NULL:
        raise MemoryError()
    cdef Py_ssize_t i
    for i in range(n):
        buf[i] = seq[i]
    return buf


cdef int _first_fit(long long* avail, long long* extra, Py_ssize_t nodes,
                    long long c, long long g, long long m, int count, int* out):
    cdef Py_ssize_t i, o
    cdef int k = 0
    for i in range(nodes):
        o = i * WIDTH
        if avail[o] < c or avail[o + 1] < g or avail[o + 2] < m:
            continue
        if extra != NULL and (extra[o] < c or extra[o + 1] < g or extra[o + 2] < m):
            continue
        out[k] = <int> i
        k += 1
        if k == count:
            return k
    return k


def first_fit(free, need, int count, extra=None):
    cdef Py_ssize_t n = len(free)
    cdef long long* avail = _copy(free, n)
    cdef long long* ext = NULL
    cdef int* out = <int*> malloc((count if count > 0 else 1) * sizeof(int))
    cdef int k, j
    try:
        if extra is not None:
            ext = _copy(extra, n)
        k = _first_fit(avail, ext, n // WIDTH, need[0], need[1], need[2], count, out)
        if k < count:
            return None
        return [out[j] for j in range(k)]
    finally:
        cfree(avail)
        if ext != NULL:
            cfree(ext)
        cfree(out)


def earliest_fit(free, releases, need, int count, long long now):
    cdef Py_ssize_t n = len(free)
    cdef Py_ssize_t r = len(releases) // 5
    cdef long long* avail = _copy(free, n)
    cdef long long* rel = _copy(releases, r * 5)
    cdef int* out = <int*> malloc((count if count > 0 else 1) * sizeof(int))
    cdef long long c = need[0], g = need[1], m = need[2]
    cdef long long t
    cdef Py_ssize_t i = 0, o, j
    cdef int k
    try:
        k = _first_fit(avail, NULL, n // WIDTH, c, g, m, count, out)
        if k == count:
            return now, [out[j] for j in range(k)], [avail[j] for j in range(n)]
        while i < r:
            t = rel[i * 5]
            while i < r and rel[i * 5] == t:
                o = rel[i * 5 + 1] * WIDTH
                avail[o] += rel[i * 5 + 2]
                avail[o + 1] += rel[i * 5 + 3]
                avail[o + 2] += rel[i * 5 + 4]
                i += 1
            k = _first_fit(avail, NULL, n // WIDTH, c, g, m, count, out)
            if k == count:
                return (t if t > now else now), [out[j] for j in range(k)], \
                    [avail[j] for j in range(n)]
        return None
    finally:
        cfree(avail)
        cfree(rel)
        cfree(out)
