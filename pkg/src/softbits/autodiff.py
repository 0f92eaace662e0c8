"""Minimal reverse-mode autodiff over dense float64 arrays.

A :class:`Tape` records primitive applications dynamically; :func:`backward`
walks the record in reverse and accumulates exact vector-Jacobian products.
Tapes are single-writer and built per evaluation (stochastic graphs change
shape with the sampled values), and everything is double precision.

The module-level math functions (``exp``, ``log``, ``logsumexp``, ...)
dispatch on their argument: a :class:`NodeRef` is recorded on its tape, a
plain ndarray goes straight through numpy using the same numeric routines.
Formulas written against these functions therefore run identically on the
differentiable graph and on the plain evaluation graph.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np


# ---------------------------------------------------------------------------
# shared numeric routines (used by both the tape primitives and the ndarray
# fast path, so the two evaluation modes agree bit for bit)

def np_sigmoid(x):
    # tanh form avoids exp overflow at large |x|
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def np_softplus(x):
    return np.logaddexp(0.0, np.asarray(x, dtype=np.float64))


def np_logsumexp(x, axis=-1, keepdims=False):
    x = np.asarray(x, dtype=np.float64)
    m = np.max(x, axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True)) + m
    if not keepdims:
        out = np.squeeze(out, axis=axis)
    return out


def np_softmax(x, axis=-1):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(x - np.max(x, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverses numpy broadcasting)."""
    grad = np.asarray(grad, dtype=np.float64)
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# tape machinery

class _Record:
    __slots__ = ("value", "parents", "pullbacks", "grad", "track")

    def __init__(self, value, parents, pullbacks, track):
        self.value = value
        self.parents = parents          # indices into the tape, topological
        self.pullbacks = pullbacks      # one callable (or None) per parent
        self.grad = None
        self.track = track


class Tape:
    """Ordered record of primitive applications with value/gradient slots."""

    def __init__(self):
        self._records: list[_Record] = []

    def __len__(self):
        return len(self._records)

    def _emit(self, value, parents=(), pullbacks=(), track=None) -> "NodeRef":
        value = np.asarray(value, dtype=np.float64)
        if track is None:
            track = any(self._records[p].track for p in parents)
        self._records.append(_Record(value, tuple(parents), tuple(pullbacks), track))
        return NodeRef(self, len(self._records) - 1)

    def leaf(self, value) -> "NodeRef":
        """Gradient-tracked input node (a trainable parameter)."""
        return self._emit(value, track=True)

    def constant(self, value) -> "NodeRef":
        """Input node that never receives gradient."""
        return self._emit(value, track=False)

    def lift(self, x) -> "NodeRef":
        if isinstance(x, NodeRef):
            if x.tape is not self:
                raise ValueError("node belongs to a different tape")
            return x
        return self.constant(x)

    def zero_grads(self):
        for r in self._records:
            r.grad = None


class NodeRef:
    """Opaque handle (tape, index) to a recorded value; shape is immutable."""

    __slots__ = ("tape", "index")

    # make ndarray <op> NodeRef defer to our reflected operators
    __array_ufunc__ = None
    __array_priority__ = 100

    def __init__(self, tape: Tape, index: int):
        self.tape = tape
        self.index = index

    @property
    def _rec(self) -> _Record:
        return self.tape._records[self.index]

    @property
    def value(self) -> np.ndarray:
        return self._rec.value

    @property
    def grad(self) -> Optional[np.ndarray]:
        return self._rec.grad

    @property
    def shape(self) -> tuple:
        return self._rec.value.shape

    def __repr__(self):
        return f"NodeRef(idx={self.index}, shape={self.shape})"

    # -- elementwise arithmetic ------------------------------------------

    def __add__(self, other):
        a, b = self, self.tape.lift(other)
        return self.tape._emit(
            a.value + b.value, (a.index, b.index),
            (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(g, b.shape)),
        )

    __radd__ = __add__

    def __sub__(self, other):
        a, b = self, self.tape.lift(other)
        return self.tape._emit(
            a.value - b.value, (a.index, b.index),
            (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(-g, b.shape)),
        )

    def __rsub__(self, other):
        return self.tape.lift(other).__sub__(self)

    def __mul__(self, other):
        a, b = self, self.tape.lift(other)
        av, bv = a.value, b.value
        return self.tape._emit(
            av * bv, (a.index, b.index),
            (lambda g: _unbroadcast(g * bv, a.shape), lambda g: _unbroadcast(g * av, b.shape)),
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        a, b = self, self.tape.lift(other)
        av, bv = a.value, b.value
        if np.any(bv == 0.0):
            raise ZeroDivisionError("division by zero on tape")
        return self.tape._emit(
            av / bv, (a.index, b.index),
            (lambda g: _unbroadcast(g / bv, a.shape),
             lambda g: _unbroadcast(-g * av / (bv * bv), b.shape)),
        )

    def __rtruediv__(self, other):
        return self.tape.lift(other).__truediv__(self)

    def __neg__(self):
        return self.tape._emit(-self.value, (self.index,), (lambda g: -g,))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        x = self
        val = x.value[key]
        shape = x.shape

        def pull(g):
            full = np.zeros(shape, dtype=np.float64)
            np.add.at(full, key, g)
            return full

        return self.tape._emit(val, (x.index,), (pull,))

    # -- elementwise functions -------------------------------------------

    def exp(self):
        out = np.exp(self.value)
        return self.tape._emit(out, (self.index,), (lambda g: g * out,))

    def log(self):
        v = self.value
        if np.any(v <= 0.0):
            raise ValueError("log of non-positive value on tape")
        return self.tape._emit(np.log(v), (self.index,), (lambda g: g / v,))

    def sigmoid(self):
        out = np_sigmoid(self.value)
        return self.tape._emit(out, (self.index,), (lambda g: g * out * (1.0 - out),))

    def tanh(self):
        out = np.tanh(self.value)
        return self.tape._emit(out, (self.index,), (lambda g: g * (1.0 - out * out),))

    def softplus(self):
        v = self.value
        return self.tape._emit(np_softplus(v), (self.index,), (lambda g: g * np_sigmoid(v),))

    def clip(self, lo: float, hi: float):
        v = self.value
        inside = ((v > lo) & (v < hi)).astype(np.float64)
        return self.tape._emit(np.clip(v, lo, hi), (self.index,), (lambda g: g * inside,))

    # -- reductions and shape ops ------------------------------------------

    def sum(self, axis=None, keepdims=False):
        v = self.value
        out = np.sum(v, axis=axis, keepdims=keepdims)

        def pull(g):
            g = np.asarray(g, dtype=np.float64)
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return np.broadcast_to(g, v.shape).copy()

        return self.tape._emit(out, (self.index,), (pull,))

    def mean(self, axis=None, keepdims=False):
        v = self.value
        count = v.size if axis is None else v.shape[axis]
        out = np.mean(v, axis=axis, keepdims=keepdims)

        def pull(g):
            g = np.asarray(g, dtype=np.float64)
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return np.broadcast_to(g / count, v.shape).copy()

        return self.tape._emit(out, (self.index,), (pull,))

    def logsumexp(self, axis=-1, keepdims=False):
        v = self.value
        out = np_logsumexp(v, axis=axis, keepdims=keepdims)
        soft = np_softmax(v, axis=axis)

        def pull(g):
            g = np.asarray(g, dtype=np.float64)
            if not keepdims:
                g = np.expand_dims(g, axis)
            return g * soft

        return self.tape._emit(out, (self.index,), (pull,))

    def softmax(self, axis=-1):
        out = np_softmax(self.value, axis=axis)

        def pull(g):
            inner = np.sum(g * out, axis=axis, keepdims=True)
            return out * (g - inner)

        return self.tape._emit(out, (self.index,), (pull,))

    def reshape(self, shape):
        v = self.value
        return self.tape._emit(
            v.reshape(shape), (self.index,), (lambda g: np.asarray(g).reshape(v.shape),)
        )

    def broadcast_to(self, shape):
        v = self.value
        return self.tape._emit(
            np.broadcast_to(v, shape).copy(), (self.index,),
            (lambda g: _unbroadcast(g, v.shape),),
        )

    def stop_gradient(self):
        """Forward identity; contributes zero to every backward pass."""
        return self.tape._emit(self.value, (), (), track=False)


# ---------------------------------------------------------------------------
# free functions: dispatch on NodeRef vs ndarray

def _is_node(x) -> bool:
    return isinstance(x, NodeRef)


def exp(x):
    return x.exp() if _is_node(x) else np.exp(np.asarray(x, dtype=np.float64))


def log(x):
    if _is_node(x):
        return x.log()
    x = np.asarray(x, dtype=np.float64)
    if np.any(x <= 0.0):
        raise ValueError("log of non-positive value")
    return np.log(x)


def sigmoid(x):
    return x.sigmoid() if _is_node(x) else np_sigmoid(x)


def tanh(x):
    return x.tanh() if _is_node(x) else np.tanh(np.asarray(x, dtype=np.float64))


def softplus(x):
    return x.softplus() if _is_node(x) else np_softplus(x)


def logsumexp(x, axis=-1, keepdims=False):
    if _is_node(x):
        return x.logsumexp(axis=axis, keepdims=keepdims)
    return np_logsumexp(x, axis=axis, keepdims=keepdims)


def softmax(x, axis=-1):
    return x.softmax(axis=axis) if _is_node(x) else np_softmax(x, axis=axis)


def clip(x, lo, hi):
    return x.clip(lo, hi) if _is_node(x) else np.clip(np.asarray(x, dtype=np.float64), lo, hi)


def asum(x, axis=None, keepdims=False):
    if _is_node(x):
        return x.sum(axis=axis, keepdims=keepdims)
    return np.sum(np.asarray(x, dtype=np.float64), axis=axis, keepdims=keepdims)


def amean(x, axis=None, keepdims=False):
    if _is_node(x):
        return x.mean(axis=axis, keepdims=keepdims)
    return np.mean(np.asarray(x, dtype=np.float64), axis=axis, keepdims=keepdims)


def reshape(x, shape):
    return x.reshape(shape) if _is_node(x) else np.asarray(x, dtype=np.float64).reshape(shape)


def broadcast_to(x, shape):
    if _is_node(x):
        return x.broadcast_to(shape)
    return np.broadcast_to(np.asarray(x, dtype=np.float64), shape)


def stop_gradient(x):
    return x.stop_gradient() if _is_node(x) else x


def matmul(a, b):
    if not _is_node(a) and not _is_node(b):
        return np.matmul(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))
    tape = a.tape if _is_node(a) else b.tape
    a, b = tape.lift(a), tape.lift(b)
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim not in (1, 2):
        raise ValueError(f"matmul supports (2d @ 2d) and (2d @ 1d), got {av.shape} @ {bv.shape}")
    out = np.matmul(av, bv)
    if bv.ndim == 2:
        pulls = (lambda g: np.matmul(g, bv.T), lambda g: np.matmul(av.T, g))
    else:
        pulls = (lambda g: np.outer(g, bv), lambda g: np.matmul(av.T, g))
    return tape._emit(out, (a.index, b.index), pulls)


def concat(parts: Sequence, axis=0):
    nodes = [p for p in parts if _is_node(p)]
    if not nodes:
        return np.concatenate([np.asarray(p, dtype=np.float64) for p in parts], axis=axis)
    tape = nodes[0].tape
    parts = [tape.lift(p) for p in parts]
    values = [p.value for p in parts]
    out = np.concatenate(values, axis=axis)
    sizes = [v.shape[axis] for v in values]
    offsets = np.cumsum([0] + sizes)

    def make_pull(i):
        lo, hi = offsets[i], offsets[i + 1]

        def pull(g):
            index = [slice(None)] * g.ndim
            index[axis if axis >= 0 else g.ndim + axis] = slice(lo, hi)
            return np.asarray(g)[tuple(index)]

        return pull

    return tape._emit(out, tuple(p.index for p in parts),
                      tuple(make_pull(i) for i in range(len(parts))))


def add_n(parts: Sequence):
    """Sum a list of same-shaped terms (nodes or arrays) pairwise."""
    total = parts[0]
    for p in parts[1:]:
        total = total + p
    return total


# ---------------------------------------------------------------------------
# reverse pass

def backward(root: NodeRef) -> None:
    """Accumulate d(root)/d(node) into every tracked node's gradient slot.

    ``root`` must be scalar. Gradient slots are zero-initialized on entry, so
    calling backward twice on the same root gives identical results.
    """
    if root.value.size != 1:
        raise ValueError(f"backward root must be scalar, got shape {root.shape}")
    tape = root.tape
    records = tape._records
    tape.zero_grads()
    records[root.index].grad = np.ones_like(records[root.index].value)
    for i in range(root.index, -1, -1):
        rec = records[i]
        g = rec.grad
        if g is None or not rec.track:
            continue
        for parent, pull in zip(rec.parents, rec.pullbacks):
            prec = records[parent]
            if not prec.track or pull is None:
                continue
            contrib = pull(g)
            if prec.grad is None:
                prec.grad = np.zeros_like(prec.value)
            prec.grad = prec.grad + contrib


def grad_or_zero(node: NodeRef) -> np.ndarray:
    g = node.grad
    return np.zeros_like(node.value) if g is None else g
