# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled noise kernels: same generator as softbits._kernels.fallback.

Uniform draws are bit-identical to the fallback (pure integer arithmetic
plus exact float64 scaling); the log transforms use libm and may differ
from numpy's vectorized log in the last ulp.
"""

import numpy as np

from libc.math cimport log, log1p

ctypedef unsigned long long u64

cdef u64 PHI = 0x9E3779B97F4A7C15ULL
cdef u64 M1 = 0xBF58476D1CE4E5B9ULL
cdef u64 M2 = 0x94D049BB133111EBULL
cdef double TWO_NEG_52 = 2.0 ** -52


cdef inline u64 _mix64(u64 z) nogil:
    z ^= z >> 30
    z *= M1
    z ^= z >> 27
    z *= M2
    z ^= z >> 31
    return z


cdef inline double _uniform(u64 key, u64 counter) nogil:
    cdef u64 raw = _mix64(key ^ (counter * PHI + M2))
    return (<double> (raw >> 12) + 0.5) * TWO_NEG_52


def stream_key(seed, stream_id):
    cdef u64 s = <u64> (seed & 0xFFFFFFFFFFFFFFFF)
    cdef u64 i = <u64> (stream_id & 0xFFFFFFFFFFFFFFFF)
    return _mix64(_mix64(s + PHI) ^ (i * M1 + PHI))


def bulk_uniform(key, start, n):
    cdef u64 k = <u64> (key & 0xFFFFFFFFFFFFFFFF)
    cdef u64 c0 = <u64> (start & 0xFFFFFFFFFFFFFFFF)
    cdef Py_ssize_t m = n, i
    out = np.empty(m, dtype=np.float64)
    cdef double[::1] v = out
    with nogil:
        for i in range(m):
            v[i] = _uniform(k, c0 + <u64> i)
    return out


def bulk_gumbel(key, start, n):
    cdef u64 k = <u64> (key & 0xFFFFFFFFFFFFFFFF)
    cdef u64 c0 = <u64> (start & 0xFFFFFFFFFFFFFFFF)
    cdef Py_ssize_t m = n, i
    out = np.empty(m, dtype=np.float64)
    cdef double[::1] v = out
    with nogil:
        for i in range(m):
            v[i] = -log(-log(_uniform(k, c0 + <u64> i)))
    return out


def bulk_logistic(key, start, n):
    cdef u64 k = <u64> (key & 0xFFFFFFFFFFFFFFFF)
    cdef u64 c0 = <u64> (start & 0xFFFFFFFFFFFFFFFF)
    cdef Py_ssize_t m = n, i
    cdef double u
    out = np.empty(m, dtype=np.float64)
    cdef double[::1] v = out
    with nogil:
        for i in range(m):
            u = _uniform(k, c0 + <u64> i)
            v[i] = log(u) - log1p(-u)
    return out
