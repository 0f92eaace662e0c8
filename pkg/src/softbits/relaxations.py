"""Discrete random variables and their tempered continuous relaxations.

Each family comes as a reparameterized sampler plus a closed-form log-density
(or log-mass), parameterized by logits (log of the unnormalized probabilities)
and a positive temperature:

* ``discrete_*``       one-hot discrete variable sampled by perturbed argmax
* ``concrete_*``       tempered softmax of Gumbel-perturbed logits, a density
                       on the open simplex
* ``exp_concrete_*``   the componentwise log of the above, the numerically
                       safe stochastic node (densities never underflow)
* ``binary_concrete_*``  two-state special case: sigmoid of a tempered,
                       relocated Logistic
* ``binary_logit_*``   the pre-sigmoid node of the binary case

Densities are computed and exposed only in log space. Samplers accept a
``noise`` override so tests and common-random-number estimators can pin the
underlying draws. Logits arguments may be plain arrays or autodiff nodes;
sample-space arguments follow the same rule where differentiation is
meaningful.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from softbits import autodiff as ad
from softbits.noise import RngStream

SIMPLEX_TOL = 1e-9


@dataclass(frozen=True)
class OneHot:
    """A single discrete state: index into [0, arity)."""

    index: int
    arity: int

    def __post_init__(self):
        if not 0 <= self.index < self.arity:
            raise ValueError(f"index {self.index} outside [0, {self.arity})")

    def vector(self) -> np.ndarray:
        v = np.zeros(self.arity)
        v[self.index] = 1.0
        return v


def _values(x) -> np.ndarray:
    return np.asarray(x.value if isinstance(x, ad.NodeRef) else x, dtype=np.float64)


def check_logits(logits):
    v = _values(logits)
    if v.shape[-1] < 1:
        raise ValueError("need at least one state")
    if not np.all(np.isfinite(v)):
        raise ValueError("logits must be finite")
    return v.shape[-1]


def check_temperature(lam: float) -> float:
    lam = float(lam)
    if not (lam > 0.0 and math.isfinite(lam)):
        raise ValueError(f"temperature must be positive and finite, got {lam}")
    return lam


def check_simplex(x, tol: float = SIMPLEX_TOL):
    """Open-simplex membership: coords in (0, 1), summing to 1 within tol."""
    v = _values(x)
    if np.any(v <= 0.0) or np.any(v >= 1.0):
        raise ValueError("simplex coordinates must lie strictly inside (0, 1)")
    err = np.max(np.abs(np.sum(v, axis=-1) - 1.0))
    if err > tol:
        raise ValueError(f"simplex coordinates sum to 1 +- {err:.3g} (tol {tol:g})")


def check_log_simplex(y, tol: float = SIMPLEX_TOL):
    """Log-simplex membership: coords < 0 with log-sum-exp 0 within tol."""
    v = _values(y)
    if np.any(v >= 0.0):
        raise ValueError("log-simplex coordinates must be negative")
    err = np.max(np.abs(ad.np_logsumexp(v, axis=-1)))
    if err > tol:
        raise ValueError(f"log-simplex log-sum-exp is 0 +- {err:.3g} (tol {tol:g})")


def _take_last(x, idx: np.ndarray):
    """Gather along the last axis; works on nodes and arrays."""
    idx = np.asarray(idx)
    if isinstance(x, ad.NodeRef):
        if idx.ndim == 0:
            return x[(..., int(idx))]
        lead = np.ix_(*[np.arange(s) for s in idx.shape])
        return x[lead + (idx,)]
    x = np.asarray(x, dtype=np.float64)
    if idx.ndim == 0:
        return x[..., int(idx)]
    return np.take_along_axis(x, idx[..., None], axis=-1)[..., 0]


# ---------------------------------------------------------------------------
# discrete (one-hot) variables via perturbed argmax

def discrete_sample(logits, rng: RngStream) -> OneHot:
    """Sample a one-hot state: argmax_k { logits_k + Gumbel_k }.

    P(index = k) is proportional to exp(logits_k). Not differentiable; logits
    must be a plain array (use the relaxed samplers on a tape).
    """
    if isinstance(logits, ad.NodeRef):
        raise TypeError("discrete sampling is not differentiable; "
                        "detach the logits or use a relaxed sampler")
    n = check_logits(logits)
    v = _values(logits)
    if v.ndim != 1:
        raise ValueError("discrete_sample takes a single logit vector; "
                         "use discrete_sample_indices for batches")
    g = rng.gumbel((n,))
    return OneHot(int(np.argmax(v + g)), n)


def discrete_sample_indices(logits, rng: RngStream) -> np.ndarray:
    """Batched perturbed-argmax sampling: logits (..., n) -> indices (...)."""
    if isinstance(logits, ad.NodeRef):
        raise TypeError("discrete sampling is not differentiable; "
                        "detach the logits or use a relaxed sampler")
    check_logits(logits)
    v = _values(logits)
    g = rng.gumbel(v.shape)
    return np.argmax(v + g, axis=-1)


def discrete_log_mass(logits, d):
    """log P(state) = logits_k - log-sum-exp(logits).

    ``d`` is a :class:`OneHot` or an index array matching the leading shape
    of ``logits``.
    """
    n = check_logits(logits)
    if isinstance(d, OneHot):
        if d.arity != n:
            raise ValueError(f"arity mismatch: logits have {n} states, state has {d.arity}")
        idx = np.asarray(d.index)
    else:
        idx = np.asarray(d)
        if np.any(idx < 0) or np.any(idx >= n):
            raise ValueError("state index outside [0, arity)")
    return _take_last(logits, idx) - ad.logsumexp(logits, axis=-1)


def bernoulli_log_mass(logit, value):
    """log mass of value in {0,1} under P(1) = sigmoid(logit)."""
    return value * logit - ad.softplus(logit)


# ---------------------------------------------------------------------------
# Concrete: tempered softmax of perturbed logits

def exp_concrete_sample(logits, lam: float, rng: RngStream | None = None, *, noise=None):
    """Sample on the log-simplex: Y = z - logsumexp(z), z = (logits + G)/lam.

    exp(Y) is exactly a tempered-softmax (simplex) sample with the same
    noise; keeping the stochastic node in log space is what downstream
    log-density terms consume without underflow.
    """
    check_logits(logits)
    lam = check_temperature(lam)
    if noise is None:
        noise = rng.gumbel(_values(logits).shape)
    z = (logits + noise) * (1.0 / lam)
    return z - ad.logsumexp(z, axis=-1, keepdims=True)


def concrete_sample(logits, lam: float, rng: RngStream | None = None, *, noise=None):
    """Simplex sample: softmax((logits + G)/lam), via log-space renormalization."""
    return ad.exp(exp_concrete_sample(logits, lam, rng, noise=noise))


def concrete_log_density(logits, lam: float, x):
    """Log-density of the tempered-softmax variable at simplex point x.

    log p(x) = log((n-1)!) + (n-1) log lam
               + sum_k [logits_k - (lam+1) log x_k]
               - n * logsumexp_k [logits_k - lam log x_k]
    """
    n = check_logits(logits)
    lam = check_temperature(lam)
    check_simplex(x)
    log_x = ad.log(x)
    scaled = logits - lam * log_x
    s = ad.asum(scaled - log_x, axis=-1) - n * ad.logsumexp(scaled, axis=-1)
    return s + (math.lgamma(n) + (n - 1) * math.log(lam))


def exp_concrete_log_density(logits, lam: float, y):
    """Log-density of the log-simplex variable at y (logsumexp(y) = 0).

    log kappa(y) = log((n-1)!) + (n-1) log lam
                   + sum_k (logits_k - lam y_k)
                   - n * logsumexp_k (logits_k - lam y_k)
    """
    n = check_logits(logits)
    lam = check_temperature(lam)
    check_log_simplex(y)
    scaled = logits - lam * y
    s = ad.asum(scaled, axis=-1) - n * ad.logsumexp(scaled, axis=-1)
    return s + (math.lgamma(n) + (n - 1) * math.log(lam))


# ---------------------------------------------------------------------------
# binary special case

def binary_concrete_sample(logit, lam: float, rng: RngStream | None = None, *, noise=None):
    """Sample in (0,1): sigmoid((logit + L)/lam) for Logistic noise L."""
    lam = check_temperature(lam)
    if noise is None:
        noise = rng.logistic(_values(logit).shape)
    return ad.sigmoid((logit + noise) * (1.0 / lam))


def binary_concrete_log_density(logit, lam: float, x):
    """Log-density on (0,1):

    log p(x) = log lam + logit - (lam+1)(log x + log(1-x))
               - 2 logsumexp{ logit - lam log x, -lam log(1-x) }
    """
    lam = check_temperature(lam)
    xv = _values(x)
    if np.any(xv <= 0.0) or np.any(xv >= 1.0):
        raise ValueError("binary sample must lie strictly inside (0, 1)")
    log_x = ad.log(x)
    log_1mx = ad.log(1.0 - x)
    # logsumexp over the two tail terms, kept elementwise
    a = logit - lam * log_x
    b = (-lam) * log_1mx
    big = a - b
    lse = b + ad.softplus(big)
    return math.log(lam) + logit - (lam + 1.0) * (log_x + log_1mx) - 2.0 * lse


def binary_logit_sample(logit, lam: float, rng: RngStream | None = None, *, noise=None):
    """Pre-sigmoid stochastic node Y = (logit + L)/lam; sigmoid(Y) is the
    binary relaxed sample. Treating Y as the node keeps densities stable."""
    lam = check_temperature(lam)
    if noise is None:
        noise = rng.logistic(_values(logit).shape)
    return (logit + noise) * (1.0 / lam)


def binary_logit_log_density(logit, lam: float, y):
    """Log-density of the relocated, tempered Logistic node:

    log g(y) = log lam - lam y + logit - 2 softplus(logit - lam y)
    """
    lam = check_temperature(lam)
    return math.log(lam) - lam * y + logit - 2.0 * ad.softplus(logit - lam * y)


# ---------------------------------------------------------------------------
# discretization and hypercube embedding

def round_to_onehot(x) -> OneHot:
    """Argmax discretization of a simplex point; ties break to the lowest index."""
    v = _values(x)
    if v.ndim != 1:
        raise ValueError("round_to_onehot takes a single coordinate vector; "
                         "use argmax_indices for batches")
    return OneHot(int(np.argmax(v)), v.shape[-1])


def argmax_indices(x) -> np.ndarray:
    """Batched argmax discretization: (..., n) -> (...). Lowest index wins ties."""
    return np.argmax(_values(x), axis=-1)


@lru_cache(maxsize=None)
def corner_matrix(n: int) -> np.ndarray:
    """The log2(n) x n matrix whose k-th column is the k-th corner of the
    hypercube {-1,+1}^log2(n), in binary counting order with bit 0 (row 0)
    the most significant and -1 standing for a zero bit."""
    bits = n.bit_length() - 1
    if n < 2 or (1 << bits) != n:
        raise ValueError(f"arity must be a power of two >= 2, got {n}")
    cols = np.empty((bits, n))
    for k in range(n):
        for r in range(bits):
            cols[r, k] = 1.0 if (k >> (bits - 1 - r)) & 1 else -1.0
    cols.setflags(write=False)
    return cols


def hypercube_embed(value, arity: int | None = None):
    """Map a one-hot state or simplex point to hypercube coordinates C @ d.

    ``value`` may be a :class:`OneHot`, an array (..., n) of one-hot or
    simplex coordinates, or an autodiff node of the same shape.
    """
    if isinstance(value, OneHot):
        return corner_matrix(value.arity)[:, value.index].copy()
    n = arity if arity is not None else _values(value).shape[-1]
    C = corner_matrix(n)
    if isinstance(value, ad.NodeRef):
        lead = value.shape[:-1]
        flat = ad.reshape(value, (-1, n))
        out = ad.matmul(flat, C.T.copy())
        return ad.reshape(out, lead + (C.shape[0],))
    return np.matmul(np.asarray(value, dtype=np.float64), C.T)
