"""Pure-numpy noise kernels.

The generator is counter-based: draw ``i`` of a stream is a hash of the
stream key and the counter, so streams are freely splittable and any draw
is O(1) random access. The exact algorithm (all arithmetic mod 2**64):

    mix64(z):  z ^= z >> 30;  z *= 0xBF58476D1CE4E5B9
               z ^= z >> 27;  z *= 0x94D049BB133111EB
               z ^= z >> 31
    stream_key(seed, sid) = mix64(mix64(seed + PHI) ^ (sid * M1 + PHI))
    raw(key, i)           = mix64(key ^ (i * PHI + M2))
    uniform(key, i)       = ((raw(key, i) >> 12) + 0.5) * 2**-52

mix64 is the splitmix64 finalizer (a 64-bit bijection); PHI is 2**64 times
the golden ratio. Because the counter word is keyed by XOR, sequences from
distinct stream keys never merge: they differ at every index once the keys
differ. Uniform outputs lie on the grid (k + 0.5)/2**52, k in [0, 2**52),
hence strictly inside (0, 1) and exactly representable in float64.

This module is the reference implementation; softbits._kernels._core is a
Cython version of the same loops selected at import when available.
"""

import numpy as np

MASK64 = (1 << 64) - 1
PHI = 0x9E3779B97F4A7C15
M1 = 0xBF58476D1CE4E5B9
M2 = 0x94D049BB133111EB

_U_PHI = np.uint64(PHI)
_U_M1 = np.uint64(M1)
_U_M2 = np.uint64(M2)
_TWO_NEG_52 = 2.0**-52


def mix64(z: int) -> int:
    """splitmix64 finalizer on python ints (exact reference)."""
    z &= MASK64
    z ^= z >> 30
    z = (z * M1) & MASK64
    z ^= z >> 27
    z = (z * M2) & MASK64
    z ^= z >> 31
    return z


def stream_key(seed: int, stream_id: int) -> int:
    return mix64(mix64((seed + PHI) & MASK64) ^ ((stream_id * M1 + PHI) & MASK64))


def _raw(key: int, start: int, n: int) -> np.ndarray:
    counters = np.uint64(start & MASK64) + np.arange(n, dtype=np.uint64)
    z = np.uint64(key) ^ (counters * _U_PHI + _U_M2)
    z ^= z >> np.uint64(30)
    z *= _U_M1
    z ^= z >> np.uint64(27)
    z *= _U_M2
    z ^= z >> np.uint64(31)
    return z


def bulk_uniform(key: int, start: int, n: int) -> np.ndarray:
    raw = _raw(key, start, n)
    return ((raw >> np.uint64(12)).astype(np.float64) + 0.5) * _TWO_NEG_52


def bulk_gumbel(key: int, start: int, n: int) -> np.ndarray:
    u = bulk_uniform(key, start, n)
    return -np.log(-np.log(u))


def bulk_logistic(key: int, start: int, n: int) -> np.ndarray:
    u = bulk_uniform(key, start, n)
    return np.log(u) - np.log1p(-u)
