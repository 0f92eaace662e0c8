"""Deterministic, splittable random streams and the fixed noise sources.

Every stochastic operation in this package consumes an :class:`RngStream`.
A stream is identified by ``(seed, stream_id)``; identical identifiers give
bit-identical draw sequences, and distinct stream ids give statistically
independent sequences (the generator is counter-based, see
``softbits._kernels.fallback`` for the exact algorithm). Streams are never
shared between writers; derive a child stream instead.

Stream assignment map (so full runs are replayable from one ``--seed``):

    ======================  ==========
    purpose                 stream_id
    ======================  ==========
    parameter init          0
    minibatch shuffling     1
    training noise          2
    evaluation noise        3 (+ eval index via child streams)
    fixed binarization      4
    synthetic data          5
    ======================  ==========
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from softbits import _kernels

STREAM_INIT = 0
STREAM_SHUFFLE = 1
STREAM_TRAIN_NOISE = 2
STREAM_EVAL_NOISE = 3
STREAM_BINARIZE = 4
STREAM_SYNTH = 5

_MASK64 = (1 << 64) - 1


@dataclass
class RngStream:
    """One independent noise stream. Draws advance ``counter``; nothing else
    mutates, so constructing a stream (or a child) is pure."""

    seed: int
    stream_id: int
    counter: int = 0
    _key: int = field(init=False, repr=False)

    def __post_init__(self):
        self.seed = self.seed & _MASK64
        self.stream_id = self.stream_id & _MASK64
        self._key = _kernels.stream_key(self.seed, self.stream_id)

    def child(self, sub_id: int) -> "RngStream":
        """Derive an independent stream from this one. Pure: does not touch
        the parent's counter, and the same ``sub_id`` always yields the same
        child."""
        return RngStream(self.seed, _kernels.mix64(self.stream_id * _kernels.fallback.M1 + sub_id))

    def _take(self, n: int) -> int:
        start = self.counter
        self.counter = (self.counter + n) & _MASK64
        return start

    def uniform(self, shape=None):
        """Uniform draws strictly inside (0, 1)."""
        if shape is None:
            return float(_kernels.bulk_uniform(self._key, self._take(1), 1)[0])
        n = int(np.prod(shape))
        return _kernels.bulk_uniform(self._key, self._take(n), n).reshape(shape)

    # The log transforms run in numpy on top of backend-generated uniforms:
    # numpy's vectorized log outruns scalar libm at in-cache sizes, and every
    # stream output stays bit-identical whichever kernel backend is active.

    def gumbel(self, shape=None):
        """Standard Gumbel draws, -log(-log(U))."""
        u = self.uniform((1,) if shape is None else shape)
        g = -np.log(-np.log(u))
        return float(g[0]) if shape is None else g

    def logistic(self, shape=None):
        """Standard Logistic draws, log(U) - log(1 - U)."""
        u = self.uniform((1,) if shape is None else shape)
        ell = np.log(u) - np.log1p(-u)
        return float(ell[0]) if shape is None else ell

    def permutation(self, n: int) -> np.ndarray:
        """Deterministic permutation of range(n) keyed by fresh uniforms."""
        return np.argsort(self.uniform((n,)), kind="stable")


def sample_uniform(rng: RngStream) -> float:
    return rng.uniform()


def sample_gumbel(rng: RngStream) -> float:
    return rng.gumbel()


def sample_logistic(rng: RngStream) -> float:
    return rng.logistic()
