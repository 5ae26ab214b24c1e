"""Reverse-mode autodiff over numpy arrays.

A forward pass records a graph of `Node` objects; `backward` walks it in
reverse topological order and accumulates gradients into the `Parameter`
leaves. Frozen parameters (and plain arrays) enter the graph as constants,
so a forward pass with no trainable parameters below it runs as plain
numpy with zero bookkeeping.

Reductions and matmuls delegate to numpy, which keeps a fixed evaluation
order for identical inputs, so losses are bitwise reproducible per seed.
"""

from __future__ import annotations

import contextlib

import numpy as np
import scipy.sparse as sp


class NumericsError(ValueError):
    pass


class ShapeError(NumericsError):
    def __init__(self, op, *shapes):
        super().__init__(f"{op}: incompatible shapes {' vs '.join(map(str, shapes))}")


_GRAD_ENABLED = True
_STRICT_FINITE = False


@contextlib.contextmanager
def no_grad():
    """Disable graph recording; all ops run as plain numpy."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextlib.contextmanager
def strict_finite(enabled=True):
    """Reject NaN/Inf at every op boundary (used in 64-bit test mode)."""
    global _STRICT_FINITE
    prev = _STRICT_FINITE
    _STRICT_FINITE = enabled
    try:
        yield
    finally:
        _STRICT_FINITE = prev


def _check_finite(name, arr):
    if not np.all(np.isfinite(arr)):
        raise NumericsError(f"non-finite values in {name}")


class Parameter:
    """A named tensor with a persistent gradient buffer and a frozen flag."""

    def __init__(self, value, name="", frozen=False):
        self.value = np.asarray(value)
        _check_finite(name or "parameter", self.value)
        self.gradient = np.zeros_like(self.value)
        self.name = name
        self.frozen = frozen

    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self):
        return self.value.size

    def zero_grad(self):
        self.gradient[...] = 0.0

    def __repr__(self):
        tag = "frozen" if self.frozen else "trainable"
        return f"Parameter({self.name!r}, shape={self.value.shape}, {tag})"


class Node:
    """One recorded value in the computation graph."""

    __slots__ = ("value", "grad", "_parents", "_backward", "_param")

    def __init__(self, value, parents=(), backward=None, param=None):
        self.value = value
        self.grad = None
        self._parents = parents
        self._backward = backward
        self._param = param

    @property
    def shape(self):
        return self.value.shape

    def __array__(self, dtype=None, copy=None):
        out = np.asarray(self.value, dtype=dtype)
        return out.copy() if copy else out


def val(x):
    """Raw ndarray behind a Node / Parameter / array-like."""
    if isinstance(x, Node):
        return x.value
    if isinstance(x, Parameter):
        return x.value
    return np.asarray(x)


def lift(x):
    """Bring an input into the graph.

    Trainable Parameters become leaf Nodes (when grads are enabled);
    everything else passes through as a plain array and is treated as a
    constant by every op.
    """
    if isinstance(x, Node):
        return x
    if isinstance(x, Parameter):
        if x.frozen or not _GRAD_ENABLED:
            return x.value
        return Node(x.value, param=x)
    return np.asarray(x)


def _node(value, pairs):
    """Create a Node from (parent_node, grad_fn) pairs, or a raw array if
    no parent is a Node."""
    if _STRICT_FINITE:
        _check_finite("op output", value)
    live = [(p, fn) for p, fn in pairs if isinstance(p, Node)]
    if not live:
        return value

    def backward(g):
        return [(p, fn(g)) for p, fn in live]

    return Node(value, tuple(p for p, _ in live), backward)


def backward(loss):
    """Accumulate d(loss)/d(param) into every trainable Parameter leaf."""
    if not isinstance(loss, Node):
        raise NumericsError("backward called on a value with no recorded graph "
                            "(no trainable parameters in the forward pass?)")
    # Iterative post-order topological sort.
    topo, visited, stack = [], set(), [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.value)
    for node in reversed(topo):
        if node.grad is None:
            continue
        if node._backward is not None:
            for parent, g in node._backward(node.grad):
                parent.grad = g if parent.grad is None else parent.grad + g
        if node._param is not None and not node._param.frozen:
            node._param.gradient += node.grad


def _unbroadcast(g, shape):
    """Sum a broadcast gradient back down to `shape`."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, (gs, s) in enumerate(zip(g.shape, shape)):
        if s == 1 and gs != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise / structural ops

def add(a, b):
    a, b = lift(a), lift(b)
    va, vb = val(a), val(b)
    out = va + vb
    return _node(out, [(a, lambda g: _unbroadcast(g, va.shape)),
                       (b, lambda g: _unbroadcast(g, vb.shape))])


def sub(a, b):
    a, b = lift(a), lift(b)
    va, vb = val(a), val(b)
    out = va - vb
    return _node(out, [(a, lambda g: _unbroadcast(g, va.shape)),
                       (b, lambda g: _unbroadcast(-g, vb.shape))])


def mul(a, b):
    a, b = lift(a), lift(b)
    va, vb = val(a), val(b)
    out = va * vb
    return _node(out, [(a, lambda g: _unbroadcast(g * vb, va.shape)),
                       (b, lambda g: _unbroadcast(g * va, vb.shape))])


def neg(a):
    a = lift(a)
    return _node(-val(a), [(a, lambda g: -g)])


def matmul(a, b):
    a, b = lift(a), lift(b)
    va, vb = val(a), val(b)
    if va.shape[-1] != vb.shape[-2 if vb.ndim > 1 else 0]:
        raise ShapeError("matmul", va.shape, vb.shape)
    out = va @ vb

    def ga(g):
        return _unbroadcast(g @ np.swapaxes(vb, -1, -2) if vb.ndim > 1
                            else np.multiply.outer(g, vb), va.shape)

    def gb(g):
        if vb.ndim == 1:
            return _unbroadcast(np.swapaxes(va, -1, -2) @ g, vb.shape)
        return _unbroadcast(np.swapaxes(va, -1, -2) @ g, vb.shape)

    return _node(out, [(a, ga), (b, gb)])


def sparse_matmul(m, x):
    """m @ x where `m` is a constant scipy sparse matrix."""
    x = lift(x)
    vx = val(x)
    if m.shape[1] != vx.shape[0]:
        raise ShapeError("sparse_matmul", m.shape, vx.shape)
    out = np.asarray(m @ vx)
    mt = m.T.tocsr()
    return _node(out, [(x, lambda g: np.asarray(mt @ g))])


def concat_cols(a, b):
    a, b = lift(a), lift(b)
    va, vb = val(a), val(b)
    if va.shape[:-1] != vb.shape[:-1]:
        raise ShapeError("concat_cols", va.shape, vb.shape)
    k = va.shape[-1]
    out = np.concatenate([va, vb], axis=-1)
    return _node(out, [(a, lambda g: g[..., :k]), (b, lambda g: g[..., k:])])


def reshape(a, shape):
    a = lift(a)
    va = val(a)
    out = va.reshape(shape)
    return _node(out, [(a, lambda g: g.reshape(va.shape))])


def transpose(a, axes):
    a = lift(a)
    inv = np.argsort(axes)
    return _node(val(a).transpose(axes), [(a, lambda g: g.transpose(inv))])


def gather_rows(table, ids):
    """table[ids] along the first axis; backward scatter-adds."""
    table = lift(table)
    vt = val(table)
    ids = np.asarray(ids)
    out = vt[ids]

    def g_table(g):
        gt = np.zeros_like(vt)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, *vt.shape[1:]))
        return gt

    return _node(out, [(table, g_table)])


def sum_(a, axis=None, keepdims=False):
    a = lift(a)
    va = val(a)
    out = va.sum(axis=axis, keepdims=keepdims)

    def ga(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, va.shape).copy()

    return _node(out, [(a, ga)])


def mean_(a, axis=None, keepdims=False):
    a = lift(a)
    va = val(a)
    n = va.size if axis is None else va.shape[axis]
    out = va.mean(axis=axis, keepdims=keepdims)

    def ga(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, va.shape).copy() / n

    return _node(out, [(a, ga)])


def mean_rows(x):
    """Mean over the rows of a matrix; the empty set maps to the zero vector."""
    x = lift(x)
    vx = val(x)
    if vx.ndim != 2:
        raise ShapeError("mean_rows", vx.shape)
    if vx.shape[0] == 0:
        return np.zeros(vx.shape[1], dtype=vx.dtype)
    return mean_(x, axis=0)


# ---------------------------------------------------------------------------
# nonlinearities

def relu(a):
    a = lift(a)
    va = val(a)
    out = np.maximum(va, 0)
    return _node(out, [(a, lambda g: g * (va > 0))])


def sigmoid(a):
    a = lift(a)
    s = 1.0 / (1.0 + np.exp(-val(a)))
    return _node(s, [(a, lambda g: g * s * (1.0 - s))])


def softmax(a, axis=-1):
    a = lift(a)
    va = val(a)
    shifted = va - va.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def ga(g):
        return s * (g - (g * s).sum(axis=axis, keepdims=True))

    return _node(s, [(a, ga)])


def layernorm(x, gamma, beta, eps=1e-5):
    """Normalize the last axis, then scale and shift."""
    x, gamma, beta = lift(x), lift(gamma), lift(beta)
    vx, vg = val(x), val(gamma)
    if vx.shape[-1] != vg.shape[-1]:
        raise ShapeError("layernorm", vx.shape, vg.shape)
    mu = vx.mean(axis=-1, keepdims=True)
    var = vx.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (vx - mu) * inv
    out = vg * xhat + val(beta)
    d = vx.shape[-1]

    def gx(g):
        gh = g * vg
        return inv * (gh - gh.mean(axis=-1, keepdims=True)
                      - xhat * (gh * xhat).sum(axis=-1, keepdims=True) / d)

    def ggamma(g):
        return _unbroadcast(g * xhat, vg.shape)

    def gbeta(g):
        return _unbroadcast(g, val(beta).shape)

    return _node(out, [(x, gx), (gamma, ggamma), (beta, gbeta)])


def dropout(x, rate, rng=None):
    """Inverted dropout; rate 0 is the identity (the default everywhere)."""
    if not 0.0 <= rate < 1.0:
        raise NumericsError(f"dropout rate {rate} outside [0, 1)")
    if rate == 0.0:
        return lift(x)
    if rng is None:
        raise NumericsError("dropout with rate > 0 requires an rng")
    x = lift(x)
    keep = (rng.random(val(x).shape) >= rate) / (1.0 - rate)
    return mul(x, keep.astype(val(x).dtype))


def attention(q, k, v, mask_bias=None):
    """Scaled dot-product attention over the last two axes.

    `mask_bias` is an additive constant (e.g. -1e9 on padded key positions)
    broadcast onto the score matrix.
    """
    dk = val(q).shape[-1]
    scores = mul(matmul(q, transpose_last(k)), 1.0 / np.sqrt(dk))
    if mask_bias is not None:
        scores = add(scores, mask_bias)
    return matmul(softmax(scores, axis=-1), v)


def transpose_last(a):
    a = lift(a)
    nd = val(a).ndim
    axes = list(range(nd - 2)) + [nd - 1, nd - 2]
    return transpose(a, axes)


# ---------------------------------------------------------------------------
# loss

def cross_entropy(logits, labels):
    """Mean negative log-likelihood with max-subtraction stabilization."""
    logits = lift(logits)
    vl = val(logits)
    if vl.ndim != 2:
        raise ShapeError("cross_entropy", vl.shape)
    labels = np.asarray(labels)
    n, c = vl.shape
    if labels.shape != (n,):
        raise ShapeError("cross_entropy labels", vl.shape, labels.shape)
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= c:
        bad = labels[(labels < 0) | (labels >= c)][0]
        raise NumericsError(f"cross_entropy: label {bad} out of range [0, {c})")
    shifted = vl - vl.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    nll = lse - shifted[np.arange(n), labels]
    out = nll.mean(dtype=vl.dtype)
    _check_finite("cross_entropy", out)

    def ga(g):
        p = np.exp(shifted)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(n), labels] -= 1.0
        return (g * p / n).astype(vl.dtype)

    return _node(np.asarray(out), [(logits, ga)])


def linear(x, w, b=None):
    """x @ w.T (+ b); weights stored as (d_out, d_in)."""
    out = matmul(x, transpose_last(lift(w)) if val(w).ndim > 1 else w)
    if b is not None:
        out = add(out, b)
    return out
