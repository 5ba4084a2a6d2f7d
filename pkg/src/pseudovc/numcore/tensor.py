"""Dense tensors with a reverse-mode gradient tape.

Every differentiable primitive records the tensors it consumed and a closure
mapping the output gradient to one gradient per parent.  ``backward`` walks
the tape in reverse topological order.

Broadcasting is restricted: a binary op accepts equal shapes, a scalar, or a
right operand whose shape equals the trailing dims of the left one (the
leading dims act as batch dims).  Anything else raises ``ShapeError``.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_grad_enabled = True


class ShapeError(ValueError):
    """Two composed operations disagree on tensor dims."""


@contextlib.contextmanager
def no_grad():
    """Run forward passes without recording a tape."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf", dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.op = op
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def dims(self) -> tuple[int, ...]:
        return self.data.shape

    shape = dims

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, op="detach")

    def __repr__(self) -> str:
        return f"Tensor(dims={self.dims}, op={self.op!r}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self) -> None:
        backward(self)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype or DEFAULT_DTYPE), op="const")


def _make(data: np.ndarray, parents: Iterable[Tensor], op: str, backward_fn) -> Tensor:
    parents = tuple(parents)
    out = Tensor(data, op=op)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor, grad: np.ndarray | None = None) -> None:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every requires_grad leaf."""
    if not root.requires_grad:
        return
    if grad is None:
        if root.data.size != 1:
            raise ShapeError(f"backward: output of '{root.op}' is not scalar, dims {root.dims}")
        grad = np.ones_like(root.data)
    pending: dict[int, np.ndarray] = {id(root): grad}
    for node in reversed(_topo_order(root)):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + pg
            else:
                pending[key] = pg


# ---------------------------------------------------------------------------
# elementwise binary ops


def _check_broadcast(opname: str, a: Tensor, b: Tensor) -> None:
    if a.dims == b.dims or b.ndim == 0 or a.ndim == 0:
        return
    if b.ndim < a.ndim and a.dims[a.ndim - b.ndim:] == b.dims:
        return
    if a.ndim < b.ndim and b.dims[b.ndim - a.ndim:] == a.dims:
        return
    raise ShapeError(
        f"{opname}: operand from '{a.op}' has dims {a.dims}, "
        f"operand from '{b.op}' has dims {b.dims}"
    )


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    if len(shape) == 0:
        return np.asarray(g.sum(), dtype=g.dtype)
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead)))


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast("add", a, b)
    return _make(a.data + b.data, (a, b), "add",
                 lambda g: (_unbroadcast(g, a.dims), _unbroadcast(g, b.dims)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast("sub", a, b)
    return _make(a.data - b.data, (a, b), "sub",
                 lambda g: (_unbroadcast(g, a.dims), _unbroadcast(-g, b.dims)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast("mul", a, b)
    return _make(a.data * b.data, (a, b), "mul",
                 lambda g: (_unbroadcast(g * b.data, a.dims), _unbroadcast(g * a.data, b.dims)))


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast("div", a, b)
    out = a.data / b.data

    def bw(g):
        return (_unbroadcast(g / b.data, a.dims), _unbroadcast(-g * out / b.data, b.dims))

    return _make(out, (a, b), "div", bw)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, a)
    b = as_tensor(b)
    return as_tensor(a, b), b


# ---------------------------------------------------------------------------
# elementwise unary ops


def neg(x: Tensor) -> Tensor:
    return _make(-x.data, (x,), "neg", lambda g: (-g,))


def square(x: Tensor) -> Tensor:
    return _make(x.data * x.data, (x,), "square", lambda g: (2 * g * x.data,))


def abs_(x: Tensor) -> Tensor:
    return _make(np.abs(x.data), (x,), "abs", lambda g: (g * np.sign(x.data),))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make(out, (x,), "exp", lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    return _make(np.log(x.data), (x,), "log", lambda g: (g / x.data,))


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return _make(out, (x,), "sqrt", lambda g: (g * 0.5 / out,))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _make(out, (x,), "tanh", lambda g: (g * (1 - out * out),))


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid(x.data)
    return _make(out, (x,), "sigmoid", lambda g: (g * out * (1 - out),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(x.data * mask, (x,), "relu", lambda g: (g * mask,))


def softplus(x: Tensor) -> Tensor:
    out = np.logaddexp(0, x.data).astype(x.dtype, copy=False)
    return _make(out, (x,), "softplus", lambda g: (g * _sigmoid(x.data),))


def _sigmoid(v: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1 / (1 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1 + e)
    return out


# ---------------------------------------------------------------------------
# reductions and shape ops


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.dims).copy(),)

    return _make(np.asarray(out), (x,), "sum", bw)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    n = int(np.prod([x.dims[a] for a in axes])) if axes else 1
    out = x.data.sum(axis=axes, keepdims=keepdims) / x.dtype.type(n)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / x.dtype.type(n), x.dims).copy(),)

    return _make(np.asarray(out), (x,), "mean", bw)


def reshape(x: Tensor, shape) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: output of '{x.op}' with dims {x.dims} cannot become {tuple(shape)}") from exc
    return _make(out, (x,), "reshape", lambda g: (g.reshape(x.dims),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    inv = np.argsort(axes)
    return _make(x.data.transpose(axes), (x,), "transpose", lambda g: (g.transpose(inv),))


def getitem(x: Tensor, index) -> Tensor:
    out = x.data[index]
    parts = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(i, (slice, int, type(None), type(Ellipsis))) for i in parts)

    def bw(g):
        full = np.zeros_like(x.data)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _make(np.ascontiguousarray(out), (x,), "getitem", bw)


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = [as_tensor(t) for t in xs]
    ax = axis % xs[0].ndim
    ref = xs[0]
    for t in xs[1:]:
        if t.ndim != ref.ndim or any(t.dims[i] != ref.dims[i] for i in range(ref.ndim) if i != ax):
            raise ShapeError(
                f"concat: operand from '{ref.op}' has dims {ref.dims}, "
                f"operand from '{t.op}' has dims {t.dims}"
            )
    splits = np.cumsum([t.dims[ax] for t in xs])[:-1]
    return _make(np.concatenate([t.data for t in xs], axis=ax), xs, "concat",
                 lambda g: tuple(np.split(g, splits, axis=ax)))


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(t) for t in xs]
    for t in xs[1:]:
        if t.dims != xs[0].dims:
            raise ShapeError(
                f"stack: operand from '{xs[0].op}' has dims {xs[0].dims}, "
                f"operand from '{t.op}' has dims {t.dims}"
            )
    out = np.stack([t.data for t in xs], axis=axis)
    ax = axis % out.ndim
    return _make(out, xs, "stack",
                 lambda g: tuple(np.take(g, i, axis=ax) for i in range(len(xs))))


def repeat(x: Tensor, repeats: int, axis: int) -> Tensor:
    """np.repeat along ``axis`` (each element repeated ``repeats`` times)."""
    ax = axis % x.ndim
    out = np.repeat(x.data, repeats, axis=ax)

    def bw(g):
        shape = list(x.dims)
        shape.insert(ax + 1, repeats)
        return (g.reshape(shape).sum(axis=ax + 1),)

    return _make(out, (x,), "repeat", bw)


def expand(x: Tensor, axis: int, n: int) -> Tensor:
    """Insert a new axis of length ``n`` at ``axis`` by copying."""
    ax = axis % (x.ndim + 1)
    out = np.repeat(np.expand_dims(x.data, ax), n, axis=ax)
    return _make(out, (x,), "expand", lambda g: (g.sum(axis=ax),))


def pad_axis(x: Tensor, axis: int, before: int, after: int, value: float = 0.0) -> Tensor:
    ax = axis % x.ndim
    widths = [(0, 0)] * x.ndim
    widths[ax] = (before, after)
    out = np.pad(x.data, widths, constant_values=value)
    sl = [slice(None)] * x.ndim
    sl[ax] = slice(before, before + x.dims[ax])
    return _make(out, (x,), "pad", lambda g: (g[tuple(sl)],))


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a (..., n) @ b (n, m)`` or plain 2-D matmul."""
    a, b = _pair(a, b)
    if b.ndim != 2 or a.ndim < 1 or a.dims[-1] != b.dims[0]:
        raise ShapeError(
            f"matmul: operand from '{a.op}' has dims {a.dims}, "
            f"operand from '{b.op}' has dims {b.dims}"
        )
    out = a.data @ b.data

    def bw(g):
        ga = g @ b.data.T
        a2 = a.data.reshape(-1, a.dims[-1])
        gb = a2.T @ g.reshape(-1, b.dims[1])
        return ga, gb

    return _make(out, (a, b), "matmul", bw)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = matmul(x, w)
    return y if b is None else add(y, b)


# ---------------------------------------------------------------------------
# fused composites with hand-written gradients


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    m = x.data.max(axis=axis, keepdims=True)
    shifted = x.data - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)
    return _make(out, (x,), "log_softmax",
                 lambda g: (g - soft * g.sum(axis=axis, keepdims=True),))


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """x / ||x|| along ``axis``."""
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True) + x.dtype.type(eps))
    out = x.data / norm

    def bw(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return ((g - out * dot) / norm,)

    return _make(out, (x,), "l2_normalize", bw)


def cosine_similarity(a: Tensor, b: Tensor, axis: int = -1) -> Tensor:
    """Cosine along ``axis``; raises on a zero-norm operand."""
    a, b = _pair(a, b)
    if a.dims != b.dims:
        raise ShapeError(
            f"cosine_similarity: operand from '{a.op}' has dims {a.dims}, "
            f"operand from '{b.op}' has dims {b.dims}"
        )
    na = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))
    nb = np.sqrt((b.data * b.data).sum(axis=axis, keepdims=True))
    if np.any(na == 0) or np.any(nb == 0):
        raise ValueError("cosine_similarity: zero-norm vector")
    ua, ub = a.data / na, b.data / nb
    cos = (ua * ub).sum(axis=axis, keepdims=True)

    def bw(g):
        g = np.expand_dims(g, axis)
        ga = g * (ub - ua * cos) / na
        gb = g * (ua - ub * cos) / nb
        return ga, gb

    return _make(np.squeeze(cos, axis=axis), (a, b), "cosine_similarity", bw)


def mse(a: Tensor, b: Tensor) -> Tensor:
    return mean(square(sub(a, b)))


def mae(a: Tensor, b: Tensor) -> Tensor:
    return mean(abs_(sub(a, b)))


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``logits`` (B, K)."""
    logp = log_softmax(logits, axis=-1)
    picked = getitem(logp, (np.arange(len(labels)), np.asarray(labels)))
    return neg(mean(picked))
