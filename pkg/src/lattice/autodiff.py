"""A small tape-based reverse-mode autodiff over numpy arrays.

Every op builds a new Tensor and, when any input needs a gradient, appends
it to the active Tape.  Creation order is a topological order, so backward
is a single reversed sweep over the tape.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    pass


class Tape:
    def __init__(self):
        self.nodes: list[Tensor] = []
        self._used = False

    def __enter__(self):
        _STACK.append(self)
        return self

    def __exit__(self, *exc):
        _STACK.pop()
        return False

    def backward(self, loss: "Tensor"):
        if self._used:
            raise RuntimeError("tape already swept; record a new one")
        self._used = True
        if loss.value.size != 1:
            raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
        loss.grad = np.ones_like(loss.value)
        for node in reversed(self.nodes):
            if node.grad is not None and node._backward is not None:
                node._backward(node.grad)


_STACK: list[Tape] = []


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, value, requires_grad=False, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad = None

    def _accum(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.shape}{', grad' if self.requires_grad else ''})"

    __add__ = lambda a, b: add(a, b)
    __radd__ = lambda a, b: add(b, a)
    __sub__ = lambda a, b: sub(a, b)
    __rsub__ = lambda a, b: sub(b, a)
    __mul__ = lambda a, b: mul(a, b)
    __rmul__ = lambda a, b: mul(b, a)
    __truediv__ = lambda a, b: div(a, b)
    __matmul__ = lambda a, b: matmul(a, b)
    __neg__ = lambda a: mul(a, -1.0)
    __getitem__ = lambda a, idx: getitem(a, idx)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value, parents, backward) -> Tensor:
    out = Tensor(value)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._backward = backward
        if _STACK:
            _STACK[-1].nodes.append(out)
    return out


def unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)

    def bw(g):
        a._accum(unbroadcast(g, a.shape))
        b._accum(unbroadcast(g, b.shape))

    return _node(a.value + b.value, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)

    def bw(g):
        a._accum(unbroadcast(g, a.shape))
        b._accum(unbroadcast(-g, b.shape))

    return _node(a.value - b.value, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)

    def bw(g):
        a._accum(unbroadcast(g * b.value, a.shape))
        b._accum(unbroadcast(g * a.value, b.shape))

    return _node(a.value * b.value, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)

    def bw(g):
        a._accum(unbroadcast(g / b.value, a.shape))
        b._accum(unbroadcast(-g * a.value / (b.value * b.value), b.shape))

    return _node(a.value / b.value, (a, b), bw)


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.value)
    return _node(y, (x,), lambda g: x._accum(g * (1.0 - y * y)))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    v = x.value
    # split by sign so exp never overflows
    e = np.exp(-np.abs(v))
    y = np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _node(y, (x,), lambda g: x._accum(g * y * (1.0 - y)))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.value > 0
    return _node(np.where(mask, x.value, 0.0), (x,), lambda g: x._accum(g * mask))


def absolute(x) -> Tensor:
    x = as_tensor(x)
    return _node(np.abs(x.value), (x,), lambda g: x._accum(g * np.sign(x.value)))


# ---------------------------------------------------------------------------
# linear algebra and reductions


def matmul(a, b) -> Tensor:
    """Batched matmul with numpy broadcasting over leading dimensions."""
    a, b = as_tensor(a), as_tensor(b)
    if a.value.ndim < 2 or b.value.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: incompatible batch shapes {a.shape} and {b.shape}") from None

    if a.value.ndim == 2 and b.value.ndim > 2:
        return _left_matmul(a, b)

    def bw(g):
        if a.requires_grad:
            a._accum(unbroadcast(g @ np.swapaxes(b.value, -1, -2), a.shape))
        if b.requires_grad:
            if b.value.ndim == 2 and a.value.ndim > 2:
                # fold leading dims into rows: one GEMM instead of a batched one
                k = a.shape[-1]
                b._accum(a.value.reshape(-1, k).T @ g.reshape(-1, g.shape[-1]))
            else:
                b._accum(unbroadcast(np.swapaxes(a.value, -1, -2) @ g, b.shape))

    return _node(a.value @ b.value, (a, b), bw)


def _left_matmul(a: Tensor, b: Tensor) -> Tensor:
    """(m, k) @ (..., k, n) as one GEMM over the folded trailing axes."""
    m, k = a.shape
    bt = np.moveaxis(b.value, -2, 0)  # (k, ..., n)
    folded = bt.reshape(k, -1)
    y = np.moveaxis((a.value @ folded).reshape((m,) + bt.shape[1:]), 0, -2)

    def bw(g):
        gt = np.moveaxis(g, -2, 0).reshape(m, -1)
        if a.requires_grad:
            a._accum(gt @ folded.T)
        if b.requires_grad:
            b._accum(np.moveaxis((a.value.T @ gt).reshape(bt.shape), 0, -2))

    return _node(y, (a, b), bw)


def sum_(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    y = x.value.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x._accum(np.broadcast_to(g, x.shape))

    return _node(y, (x,), bw)


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    n = x.value.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum_(x, axis, keepdims), 1.0 / n)


def softmax(x, axis=-1) -> Tensor:
    x = as_tensor(x)
    z = np.exp(x.value - x.value.max(axis=axis, keepdims=True))
    y = z / z.sum(axis=axis, keepdims=True)

    def bw(g):
        x._accum(y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _node(y, (x,), bw)


def log_softmax_np(v: np.ndarray, axis=-1) -> np.ndarray:
    z = v - v.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def max_pool_rows(x, axis=-2) -> Tensor:
    """Max over one axis (default: the node rows of a (..., V, F) block).

    The gradient goes to the first maximal entry along the axis.
    """
    x = as_tensor(x)
    idx = np.expand_dims(x.value.argmax(axis=axis), axis)
    y = np.take_along_axis(x.value, idx, axis=axis).squeeze(axis)

    def bw(g):
        full = np.zeros_like(x.value)
        np.put_along_axis(full, idx, np.expand_dims(g, axis), axis=axis)
        x._accum(full)

    return _node(y, (x,), bw)


def concat(xs, axis=-1) -> Tensor:
    xs = [as_tensor(t) for t in xs]
    try:
        y = np.concatenate([t.value for t in xs], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in xs]}") from None
    cuts = np.cumsum([t.shape[axis] for t in xs])[:-1]

    def bw(g):
        for t, part in zip(xs, np.split(g, cuts, axis=axis)):
            t._accum(part)

    return _node(y, xs, bw)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    return _node(x.value.reshape(shape), (x,), lambda g: x._accum(g.reshape(x.shape)))


def getitem(x, idx) -> Tensor:
    x = as_tensor(x)

    def bw(g):
        full = np.zeros_like(x.value)
        np.add.at(full, idx, g)
        x._accum(full)

    return _node(x.value[idx], (x,), bw)


def cross_entropy(logits, target, weight=None) -> Tensor:
    """Softmax cross-entropy of (B, C) logits against integer targets.

    With per-row ``weight`` the result is the weighted mean.
    """
    logits = as_tensor(logits)
    target = np.asarray(target, dtype=np.int64)
    if logits.value.ndim != 2 or target.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs target {target.shape}")
    b = logits.shape[0]
    w = np.full(b, 1.0 / b) if weight is None else np.asarray(weight, dtype=np.float64) / np.sum(weight)
    ls = log_softmax_np(logits.value)
    loss = -(w * ls[np.arange(b), target]).sum()

    def bw(g):
        p = np.exp(ls)
        p[np.arange(b), target] -= 1.0
        logits._accum(g * p * w[:, None])

    return _node(np.asarray(loss), (logits,), bw)


def backward(tape: Tape, loss: Tensor):
    tape.backward(loss)
