"""A small reverse-mode differentiation tape over float64 numpy arrays.

Each primitive computes its forward value eagerly and, when a :class:`Tape` is
supplied, records a closure that pushes the output gradient back to its inputs.
``Tape.backward`` replays those closures in exact reverse order.  Passing
``tape=None`` evaluates the same code path without recording, which is what
inference uses.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from . import manifold
from .errors import NumericDomainError, StructuralError


class Node:
    """An array value flowing through the graph, plus its gradient slot."""

    __slots__ = ("value", "grad", "requires_grad")

    def __init__(self, value, requires_grad: bool = False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    def accumulate(self, g) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True).reshape(self.value.shape)
        else:
            self.grad += g

    def __repr__(self):
        return f"{type(self).__name__}(shape={self.shape})"


class Param(Node):
    """A trainable tensor.  Its gradient buffer is persistent and accumulates across tapes."""

    __slots__ = ("name",)

    def __init__(self, name: str, value):
        super().__init__(np.array(value, dtype=np.float64, copy=True), requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.value)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def accumulate(self, g) -> None:
        self.grad += g


def const(value) -> Node:
    return Node(value, requires_grad=False)


class Tape:
    """Ordered record of primitive applications for one forward pass."""

    def __init__(self):
        self._records = []

    def __len__(self):
        return len(self._records)

    def record(self, fn) -> None:
        self._records.append(fn)

    def backward(self, loss: Node, seed: float = 1.0) -> None:
        if not self._records:
            raise StructuralError("backward called before any forward pass was recorded")
        if loss.value.size != 1:
            raise StructuralError(f"loss must be a scalar, got shape {loss.shape}")
        if not np.isfinite(loss.value).all():
            raise NumericDomainError(f"non-finite loss {float(loss.value)}")
        loss.accumulate(np.full(loss.shape, seed, dtype=np.float64))
        for fn in reversed(self._records):
            fn()


def _out(value, tape, *inputs) -> Node:
    return Node(value, requires_grad=tape is not None and any(n.requires_grad for n in inputs))


def _live(out: Node) -> bool:
    return out.grad is not None


# -- linear algebra -----------------------------------------------------------


def matmul(tape, a: Node, b: Node) -> Node:
    out = _out(a.value @ b.value, tape, a, b)
    if out.requires_grad:
        def back():
            if _live(out):
                a.accumulate(out.grad @ b.value.T)
                b.accumulate(a.value.T @ out.grad)
        tape.record(back)
    return out


def linear(tape, x: Node, w: Node, b: Node | None = None) -> Node:
    """Row-wise affine map ``x @ w.T + b`` with ``w`` stored as (out, in)."""
    y = x.value @ w.value.T
    inputs = (x, w) if b is None else (x, w, b)
    if b is not None:
        y = y + b.value
    out = _out(y, tape, *inputs)
    if out.requires_grad:
        def back():
            if not _live(out):
                return
            g = out.grad
            x.accumulate(g @ w.value)
            w.accumulate(g.T @ x.value)
            if b is not None:
                b.accumulate(g.sum(axis=0))
        tape.record(back)
    return out


def add(tape, a: Node, b: Node) -> Node:
    if a.shape != b.shape:
        raise StructuralError(f"add expects equal shapes, got {a.shape} and {b.shape}")
    out = _out(a.value + b.value, tape, a, b)
    if out.requires_grad:
        def back():
            if _live(out):
                a.accumulate(out.grad)
                b.accumulate(out.grad)
        tape.record(back)
    return out


def mul(tape, a: Node, b: Node) -> Node:
    if a.shape != b.shape:
        raise StructuralError(f"mul expects equal shapes, got {a.shape} and {b.shape}")
    out = _out(a.value * b.value, tape, a, b)
    if out.requires_grad:
        def back():
            if _live(out):
                a.accumulate(out.grad * b.value)
                b.accumulate(out.grad * a.value)
        tape.record(back)
    return out


def scale(tape, x: Node, s: float) -> Node:
    out = _out(x.value * s, tape, x)
    if out.requires_grad:
        def back():
            if _live(out):
                x.accumulate(out.grad * s)
        tape.record(back)
    return out


def weighted_sum(tape, x: Node, weights) -> Node:
    """Scalar ``sum(weights * x)`` for a constant weight array (masks, means)."""
    w = np.broadcast_to(np.asarray(weights, dtype=np.float64), x.shape)
    out = _out(np.sum(w * x.value), tape, x)
    if out.requires_grad:
        def back():
            if _live(out):
                x.accumulate(out.grad * w)
        tape.record(back)
    return out


def total(tape, x: Node) -> Node:
    return weighted_sum(tape, x, 1.0)


def mean(tape, x: Node) -> Node:
    return weighted_sum(tape, x, 1.0 / x.value.size)


def mean_rows(tape, x: Node) -> Node:
    """Average over axis 0: (T, d) -> (1, d)."""
    n = x.shape[0]
    out = _out(x.value.mean(axis=0, keepdims=True), tape, x)
    if out.requires_grad:
        def back():
            if _live(out):
                x.accumulate(np.broadcast_to(out.grad / n, x.shape))
        tape.record(back)
    return out


def stack_scalars(tape, nodes) -> Node:
    out = _out(np.array([float(n.value) for n in nodes]), tape, *nodes)
    if out.requires_grad:
        def back():
            if _live(out):
                for i, n in enumerate(nodes):
                    n.accumulate(out.grad[i])
        tape.record(back)
    return out


def add_scalars(tape, nodes) -> Node:
    out = _out(sum(float(n.value) for n in nodes), tape, *nodes)
    if out.requires_grad:
        def back():
            if _live(out):
                for n in nodes:
                    n.accumulate(out.grad)
        tape.record(back)
    return out


# -- elementwise ----------------------------------------------------------------


def exp(tape, x: Node) -> Node:
    y = np.exp(x.value)
    out = _out(y, tape, x)
    if out.requires_grad:
        def back():
            if _live(out):
                x.accumulate(out.grad * y)
        tape.record(back)
    return out


def tanh(tape, x: Node) -> Node:
    y = np.tanh(x.value)
    out = _out(y, tape, x)
    if out.requires_grad:
        def back():
            if _live(out):
                x.accumulate(out.grad * (1.0 - y * y))
        tape.record(back)
    return out


def softplus(tape, x: Node) -> Node:
    out = _out(np.logaddexp(0.0, x.value), tape, x)
    if out.requires_grad:
        def back():
            if _live(out):
                x.accumulate(out.grad * expit(x.value))
        tape.record(back)
    return out


# -- row-wise reductions --------------------------------------------------------


def _softmax(v: np.ndarray) -> np.ndarray:
    z = v - v.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _logsumexp(v: np.ndarray) -> np.ndarray:
    m = v.max(axis=-1, keepdims=True)
    return (m + np.log(np.exp(v - m).sum(axis=-1, keepdims=True)))[..., 0]


def softmax_rows(tape, x: Node) -> Node:
    p = _softmax(x.value)
    out = _out(p, tape, x)
    if out.requires_grad:
        def back():
            if _live(out):
                g = out.grad
                x.accumulate(p * (g - np.sum(p * g, axis=-1, keepdims=True)))
        tape.record(back)
    return out


def log_softmax_rows(tape, x: Node) -> Node:
    lse = _logsumexp(x.value)
    out = _out(x.value - lse[..., None], tape, x)
    if out.requires_grad:
        def back():
            if _live(out):
                g = out.grad
                x.accumulate(g - _softmax(x.value) * g.sum(axis=-1, keepdims=True))
        tape.record(back)
    return out


def logsumexp_rows(tape, x: Node) -> Node:
    out = _out(_logsumexp(x.value), tape, x)
    if out.requires_grad:
        def back():
            if _live(out):
                x.accumulate(out.grad[..., None] * _softmax(x.value))
        tape.record(back)
    return out


def layer_norm(tape, x: Node, gain: Node, shift: Node, eps: float = 1e-5) -> Node:
    mu = x.value.mean(axis=-1, keepdims=True)
    xc = x.value - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = _out(xhat * gain.value + shift.value, tape, x, gain, shift)
    if out.requires_grad:
        def back():
            if not _live(out):
                return
            g = out.grad
            gain.accumulate(np.sum(g * xhat, axis=0))
            shift.accumulate(g.sum(axis=0))
            gh = g * gain.value
            x.accumulate(inv * (gh - gh.mean(axis=-1, keepdims=True)
                                - xhat * np.mean(gh * xhat, axis=-1, keepdims=True)))
        tape.record(back)
    return out


# -- manifold kernels -----------------------------------------------------------


def exp_map_origin(tape, y: Node, c: float) -> Node:
    out = _out(manifold.exp_map_origin(y.value, c), tape, y)
    if out.requires_grad:
        def back():
            if _live(out):
                y.accumulate(manifold.exp_map_origin_vjp(y.value, out.grad, c))
        tape.record(back)
    return out


def pairwise_distance(tape, x: Node, y: Node, c: float | None) -> Node:
    """Poincare distances for ``c > 0``; plain Euclidean distances when ``c`` is None."""
    if c is None:
        d = manifold.euclidean_pairwise_distance(x.value, y.value)
    else:
        d = manifold.pairwise_distance(x.value, y.value, c)
    out = _out(d, tape, x, y)
    if out.requires_grad:
        def back():
            if not _live(out):
                return
            if c is None:
                gx, gy = manifold.euclidean_pairwise_distance_vjp(x.value, y.value, out.grad)
            else:
                gx, gy = manifold.pairwise_distance_vjp(x.value, y.value, out.grad, c)
            x.accumulate(gx)
            y.accumulate(gy)
        tape.record(back)
    return out


# -- losses -----------------------------------------------------------------------


def binary_cross_entropy(tape, s_neg: Node, s_pos: Node, is_fake: bool) -> Node:
    """Cross-entropy of ``softmax([s_neg, s_pos])`` against the binary label."""
    z = float(s_pos.value) - float(s_neg.value)
    loss = np.logaddexp(0.0, -z) if is_fake else np.logaddexp(0.0, z)
    out = _out(loss, tape, s_neg, s_pos)
    if out.requires_grad:
        def back():
            if not _live(out):
                return
            gz = out.grad * (expit(z) - 1.0 if is_fake else expit(z))
            s_pos.accumulate(gz)
            s_neg.accumulate(-gz)
        tape.record(back)
    return out
