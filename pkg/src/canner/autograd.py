"""Reverse-mode automatic differentiation over float64 numpy arrays.

A ``Tensor`` is a node in a dynamically built computation graph: it holds a
value, the nodes it was computed from, and a closure that routes an incoming
gradient to those parents. ``backward`` on a scalar node walks the graph in
reverse topological order and deposits gradients into every ``Parameter``
leaf that was touched. Gradients are exact for the composed forward
functions; the test suite verifies them against central finite differences.

Only the operations the model layers need are provided. All data is float64;
inputs are never mutated, and gradient arrays are accumulated functionally
(never updated in place), so sharing a gradient array between consumers is
safe.
"""

from __future__ import annotations

import contextlib

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference / numeric probes)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """Graph node: float64 array plus backward plumbing."""

    __slots__ = ("data", "grad", "_parents", "_bwd", "param")

    def __init__(self, data, parents=(), bwd=None, param=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._bwd = bwd
        self.param = param

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, leaf={self._bwd is None})"

    # operator sugar; full definitions below
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)


def _wrap(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _make(data, parents, bwd) -> Tensor:
    if not _grad_enabled:
        return Tensor(data)
    return Tensor(data, parents=parents, bwd=bwd)


def _acc(t: Tensor, g: np.ndarray) -> None:
    # functional accumulation: never mutates an existing gradient array
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def backward(root: Tensor) -> None:
    """Backpropagate from a scalar node, accumulating into Parameter.grad."""
    if root.data.shape != ():
        raise ValueError(f"backward expects a scalar, got shape {root.data.shape}")
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    root.grad = np.array(1.0)
    for node in reversed(order):
        g = node.grad
        if g is None:
            continue
        if node._bwd is not None:
            node._bwd(g)
        if node.param is not None:
            node.param.grad += g


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.data + b.data

    def bwd(g):
        _acc(a, _unbroadcast(g, a.data.shape))
        _acc(b, _unbroadcast(g, b.data.shape))

    return _make(out, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.data - b.data

    def bwd(g):
        _acc(a, _unbroadcast(g, a.data.shape))
        _acc(b, _unbroadcast(-g, b.data.shape))

    return _make(out, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.data * b.data

    def bwd(g):
        _acc(a, _unbroadcast(g * b.data, a.data.shape))
        _acc(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(out, (a, b), bwd)


def neg(a) -> Tensor:
    a = _wrap(a)

    def bwd(g):
        _acc(a, -g)

    return _make(-a.data, (a,), bwd)


def matmul(a, b) -> Tensor:
    """Matrix product for 1-D/2-D operands (vector cases follow numpy)."""
    a, b = _wrap(a), _wrap(b)
    ad, bd = a.data, b.data
    out = ad @ bd

    def bwd(g):
        if ad.ndim == 2 and bd.ndim == 2:
            _acc(a, g @ bd.T)
            _acc(b, ad.T @ g)
        elif ad.ndim == 2 and bd.ndim == 1:
            _acc(a, np.outer(g, bd))
            _acc(b, ad.T @ g)
        elif ad.ndim == 1 and bd.ndim == 2:
            _acc(a, bd @ g)
            _acc(b, np.outer(ad, g))
        else:
            _acc(a, g * bd)
            _acc(b, g * ad)

    return _make(out, (a, b), bwd)


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    orig = a.data.shape

    def bwd(g):
        _acc(a, g.reshape(orig))

    return _make(a.data.reshape(shape), (a,), bwd)


def transpose(a) -> Tensor:
    a = _wrap(a)

    def bwd(g):
        _acc(a, g.T)

    return _make(a.data.T, (a,), bwd)


def permute(a, axes) -> Tensor:
    a = _wrap(a)
    inv = tuple(np.argsort(axes))

    def bwd(g):
        _acc(a, np.transpose(g, inv))

    return _make(np.transpose(a.data, axes), (a,), bwd)


def concat(parts, axis=0) -> Tensor:
    parts = [_wrap(p) for p in parts]
    sizes = [p.data.shape[axis] for p in parts]
    out = np.concatenate([p.data for p in parts], axis=axis)
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        for p, piece in zip(parts, np.split(g, splits, axis=axis)):
            _acc(p, piece)

    return _make(out, tuple(parts), bwd)


def stack(parts) -> Tensor:
    """Stack equal-shape tensors along a new leading axis."""
    parts = [_wrap(p) for p in parts]
    out = np.stack([p.data for p in parts])

    def bwd(g):
        for i, p in enumerate(parts):
            _acc(p, g[i])

    return _make(out, tuple(parts), bwd)


def tile0(a, n) -> Tensor:
    """Repeat ``a`` n times along a new leading axis."""
    a = _wrap(a)
    out = np.broadcast_to(a.data, (n,) + a.data.shape)

    def bwd(g):
        _acc(a, g.sum(axis=0))

    return _make(out, (a,), bwd)


def getitem(a, key) -> Tensor:
    """Basic indexing only (ints/slices); use take_* for fancy indexing."""
    a = _wrap(a)

    def bwd(g):
        z = np.zeros_like(a.data)
        z[key] += g
        _acc(a, z)

    return _make(a.data[key], (a,), bwd)


def take_rows(a, idx) -> Tensor:
    """Gather along axis 0 with an integer index array (duplicates allowed)."""
    a = _wrap(a)
    idx = np.asarray(idx)

    def bwd(g):
        z = np.zeros_like(a.data)
        np.add.at(z, idx, g)
        _acc(a, z)

    return _make(a.data[idx], (a,), bwd)


def take_pairs(a, rows, cols) -> Tensor:
    """Gather a[i, j] for paired index vectors (duplicates allowed)."""
    a = _wrap(a)
    rows = np.asarray(rows)
    cols = np.asarray(cols)

    def bwd(g):
        z = np.zeros_like(a.data)
        np.add.at(z, (rows, cols), g)
        _acc(a, z)

    return _make(a.data[rows, cols], (a,), bwd)


# ---------------------------------------------------------------------------
# nonlinearities and reductions


def tanh(a) -> Tensor:
    a = _wrap(a)
    out = np.tanh(a.data)

    def bwd(g):
        _acc(a, g * (1.0 - out * out))

    return _make(out, (a,), bwd)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = _wrap(a)
    out = _sigmoid(np.atleast_1d(a.data)).reshape(a.data.shape)

    def bwd(g):
        _acc(a, g * out * (1.0 - out))

    return _make(out, (a,), bwd)


def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = _wrap(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            _acc(a, np.broadcast_to(g, a.data.shape))
        else:
            ge = g if keepdims else np.expand_dims(g, axis)
            _acc(a, np.broadcast_to(ge, a.data.shape))

    return _make(out, (a,), bwd)


def softmax_last(a) -> Tensor:
    """Row-stable softmax along the last axis.

    -inf scores are allowed (they get weight 0) as long as each row keeps at
    least one finite entry.
    """
    a = _wrap(a)
    m = a.data.max(axis=-1, keepdims=True)
    e = np.exp(a.data - m)
    out = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        _acc(a, (g - (g * out).sum(axis=-1, keepdims=True)) * out)

    return _make(out, (a,), bwd)


def logsumexp(a, axis=0) -> Tensor:
    """Max-shifted log-sum-exp reducing a single integer axis."""
    a = _wrap(a)
    m = a.data.max(axis=axis, keepdims=True)
    w = np.exp(a.data - m)
    s = w.sum(axis=axis, keepdims=True)
    out = np.squeeze(np.log(s) + m, axis=axis)
    soft = w / s

    def bwd(g):
        _acc(a, soft * np.expand_dims(g, axis))

    return _make(out, (a,), bwd)
