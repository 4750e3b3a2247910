"""Reverse-mode gradient tape over a small fixed set of 2-D float64 primitives.

Every value is a 2-D array; scalars are ``(1, 1)``. Operations append the nodes
that need gradients to their tape in creation order, so walking the tape
backwards is a reverse topological order.

Primitives: matmul, add, scale, mul, transpose, take (row gather), concat,
sum, dot (row-wise), exp, log, sigmoid, softmax (row-wise, optionally masked)
and log_softmax (row-wise).
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit

from ..errors import NumericError, ShapeError


def _as_2d(value):
    arr = np.array(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ShapeError(f"tensors are 2-D, got shape {arr.shape}")
    return arr


def _check_finite(arr, what):
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite values in {what}")


class Var:
    __slots__ = ("value", "grad", "requires_grad", "tape", "name", "_parents", "_backward")

    def __init__(self, tape, value, requires_grad=False, parents=(), backward=None, name=None):
        self.tape = tape
        self.value = value
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    @property
    def T(self):
        return transpose(self)

    def item(self):
        return float(self.value.reshape(-1)[0]) if self.value.size == 1 else None

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(other, -1.0))

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, Var):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"<Var{tag} shape={self.shape} grad={'yes' if self.requires_grad else 'no'}>"


class Tape:
    def __init__(self):
        self.nodes = []

    def leaf(self, value, requires_grad=True, name=None):
        arr = _as_2d(value)
        _check_finite(arr, name or "leaf")
        v = Var(self, arr, requires_grad=requires_grad, name=name)
        if requires_grad:
            self.nodes.append(v)
        return v

    def const(self, value, name=None):
        return self.leaf(value, requires_grad=False, name=name)

    def _record(self, value, parents, backward, what):
        _check_finite(value, what)
        needs = any(p.requires_grad for p in parents)
        v = Var(self, value, requires_grad=needs,
                parents=parents if needs else (), backward=backward if needs else None)
        if needs:
            self.nodes.append(v)
        return v


def _tape_of(*vars_):
    tape = vars_[0].tape
    for v in vars_[1:]:
        if v.tape is not tape:
            raise ValueError("operands belong to different tapes")
    return tape


def _accum(var, g):
    if var.requires_grad:
        var.grad = g if var.grad is None else var.grad + g


def matmul(a, b):
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul {a.shape} @ {b.shape}")
    tape = _tape_of(a, b)

    def back(g):
        if a.requires_grad:
            _accum(a, g @ b.value.T)
        if b.requires_grad:
            _accum(b, a.value.T @ g)

    return tape._record(a.value @ b.value, (a, b), back, "matmul")


def add(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"add {a.shape} + {b.shape}")
    tape = _tape_of(a, b)

    def back(g):
        _accum(a, g)
        _accum(b, g)

    return tape._record(a.value + b.value, (a, b), back, "add")


def scale(a, c):
    """Multiply by a constant: a scalar, or a ``(rows, 1)`` column scaling each row."""
    c = np.asarray(c, dtype=np.float64)
    if c.ndim == 1:
        c = c.reshape(-1, 1)
    if c.ndim == 2 and c.shape != (a.shape[0], 1) and c.size != 1:
        raise ShapeError(f"scale factor shape {c.shape} for operand {a.shape}")
    if c.size == 1:
        c = float(c.reshape(-1)[0])
    _check_finite(np.asarray(c), "scale factor")

    def back(g):
        _accum(a, g * c)

    return a.tape._record(a.value * c, (a,), back, "scale")


def mul(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"mul {a.shape} * {b.shape}")
    tape = _tape_of(a, b)

    def back(g):
        if a.requires_grad:
            _accum(a, g * b.value)
        if b.requires_grad:
            _accum(b, g * a.value)

    return tape._record(a.value * b.value, (a, b), back, "mul")


def transpose(a):
    def back(g):
        _accum(a, g.T)

    return a.tape._record(np.ascontiguousarray(a.value.T), (a,), back, "transpose")


def take(a, index):
    """Gather rows ``a[index]``; gradients scatter-add back."""
    index = np.asarray(index, dtype=np.int64).reshape(-1)
    if len(index) and (index.min() < -a.shape[0] or index.max() >= a.shape[0]):
        raise ShapeError(f"row index out of range for {a.shape}")
    n = a.shape[0]

    def back(g):
        out = np.zeros((n, g.shape[1]))
        np.add.at(out, index, g)
        _accum(a, out)

    return a.tape._record(a.value[index], (a,), back, "take")


def concat(parts, axis=0):
    parts = list(parts)
    if not parts:
        raise ShapeError("concat of nothing")
    tape = _tape_of(*parts)
    other = 1 - axis
    if len({p.shape[other] for p in parts}) != 1:
        raise ShapeError(f"concat along axis {axis} of {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.shape[axis] for p in parts])

    def back(g):
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            if p.requires_grad:
                _accum(p, g[lo:hi] if axis == 0 else g[:, lo:hi])

    value = np.concatenate([p.value for p in parts], axis=axis)
    return tape._record(value, tuple(parts), back, "concat")


def sum(a, axis=None):  # noqa: A001
    """Total sum as ``(1, 1)``, or row sums (``axis=1``) / column sums (``axis=0``)."""
    if axis is None:
        value = a.value.sum().reshape(1, 1)
    else:
        value = a.value.sum(axis=axis, keepdims=True)
    shape = a.shape

    def back(g):
        _accum(a, np.broadcast_to(g, shape).copy())

    return a.tape._record(value, (a,), back, "sum")


def dot(a, b):
    """Row-wise inner products, shape ``(rows, 1)``."""
    if a.shape != b.shape:
        raise ShapeError(f"dot {a.shape} . {b.shape}")
    tape = _tape_of(a, b)

    def back(g):
        if a.requires_grad:
            _accum(a, g * b.value)
        if b.requires_grad:
            _accum(b, g * a.value)

    return tape._record(np.einsum("ij,ij->i", a.value, b.value).reshape(-1, 1), (a, b), back, "dot")


def exp(a):
    with np.errstate(over="ignore"):
        out = np.exp(a.value)

    def back(g):
        _accum(a, g * out)

    return a.tape._record(out, (a,), back, "exp")


def log(a):
    if np.any(a.value <= 0):
        raise NumericError("log of a non-positive value")

    def back(g):
        _accum(a, g / a.value)

    return a.tape._record(np.log(a.value), (a,), back, "log")


def sigmoid(a):
    out = expit(a.value)

    def back(g):
        _accum(a, g * out * (1.0 - out))

    return a.tape._record(out, (a,), back, "sigmoid")


def _masked_softmax(x, mask):
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    m = x.max(axis=1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(x - m)
    s = e.sum(axis=1, keepdims=True)
    # rows with no admissible entry get all-zero weights
    return np.divide(e, s, out=np.zeros_like(e), where=s > 0)


def softmax(a, mask=None):
    """Row-wise softmax with max subtraction; entries where ``mask`` is False get weight 0."""
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != a.shape:
            raise ShapeError(f"mask {mask.shape} for logits {a.shape}")
    out = _masked_softmax(a.value, mask)

    def back(g):
        _accum(a, out * (g - (g * out).sum(axis=1, keepdims=True)))

    return a.tape._record(out, (a,), back, "softmax")


def log_softmax(a):
    x = a.value
    m = x.max(axis=1, keepdims=True)
    shifted = x - m
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - lse

    def back(g):
        _accum(a, g - np.exp(out) * g.sum(axis=1, keepdims=True))

    return a.tape._record(out, (a,), back, "log_softmax")


def mean(a):
    return scale(sum(a), 1.0 / a.value.size)


def backward(tape, loss, wrt=None):
    """Propagate from a scalar ``loss``; returns ``{leaf: gradient}``.

    ``wrt`` defaults to every gradient-requiring leaf on the tape. Leaves the
    loss does not depend on get a zero gradient.
    """
    if loss.shape != (1, 1):
        raise ShapeError(f"loss must be a scalar (1, 1), got {loss.shape}")
    if loss.tape is not tape:
        raise ValueError("loss was not recorded on this tape")
    for node in tape.nodes:
        node.grad = None
    if wrt is None:
        wrt = [n for n in tape.nodes if n._backward is None]
    if loss.requires_grad:
        loss.grad = np.ones((1, 1))
        for node in reversed(tape.nodes):
            if node.grad is not None and node._backward is not None:
                node._backward(node.grad)
    return {v: (v.grad if v.grad is not None else np.zeros_like(v.value)) for v in wrt}
