"""Dense reverse-mode differentiation on numpy arrays.

Every op builds a new :class:`Tensor` that remembers its parents and a
closure that pushes the output gradient back to them.  Shapes are explicit:
the only implicit broadcast is the bias case of :func:`add`, where the
second operand has size-1 (or missing leading) axes.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class RankError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "parents", "backward_fn", "op", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward_fn=None, op: str = "leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.parents: tuple[Tensor, ...] = tuple(parents)
        self.backward_fn: Callable[[np.ndarray], None] | None = backward_fn
        self.op = op
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        return f"Tensor(op={self.op}, shape={self.shape})"

    def zero_grad(self) -> None:
        self.grad = None

    def numpy(self) -> np.ndarray:
        return self.data

    def __add__(self, other):
        return add(self, as_tensor(other))

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def _result(data, parents, backward_fn, op) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=needs, parents=parents if needs else (), backward_fn=backward_fn if needs else None, op=op)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------- arithmetic

def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        # bias-add only: b may have fewer or size-1 axes, never widens a
        ok = len(b.shape) <= len(a.shape) and all(
            nb in (1, na) for nb, na in zip(b.shape[::-1], a.shape[::-1])
        )
        if not ok:
            raise ShapeError(f"add: cannot add shapes {a.shape} and {b.shape}")

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, _unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), backward, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} differ")

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, -g)

    return _result(a.data - b.data, (a, b), backward, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")

    def backward(g):
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    return _result(a.data * b.data, (a, b), backward, "mul")


def mul_rows(x: Tensor, w: Tensor) -> Tensor:
    """Scale row ``r`` of ``x`` (R, d) by ``w[r]`` (R,)."""
    if x.data.ndim != 2 or w.shape != (x.shape[0],):
        raise ShapeError(f"mul_rows: expected (R, d) and (R,), got {x.shape} and {w.shape}")

    def backward(g):
        _accumulate(x, g * w.data[:, None])
        _accumulate(w, np.einsum("rd,rd->r", g, x.data))

    return _result(x.data * w.data[:, None], (x, w), backward, "mul_rows")


def scale(x: Tensor, c: float) -> Tensor:
    def backward(g):
        _accumulate(x, c * g)

    return _result(c * x.data, (x,), backward, "scale")


def square(x: Tensor) -> Tensor:
    def backward(g):
        _accumulate(x, 2.0 * x.data * g)

    return _result(x.data * x.data, (x,), backward, "square")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D @ 2-D, or batched 3-D @ 3-D with equal leading dimension."""
    ad, bd = a.data, b.data
    if ad.ndim == 2 and bd.ndim == 2:
        if ad.shape[1] != bd.shape[0]:
            raise ShapeError(f"matmul: inner dimensions differ for {a.shape} @ {b.shape}")
    elif ad.ndim == 3 and bd.ndim == 3:
        if ad.shape[0] != bd.shape[0] or ad.shape[2] != bd.shape[1]:
            raise ShapeError(f"matmul: incompatible batched shapes {a.shape} @ {b.shape}")
    else:
        raise ShapeError(f"matmul: unsupported ranks {a.shape} @ {b.shape}")

    def backward(g):
        _accumulate(a, g @ np.swapaxes(bd, -1, -2))
        _accumulate(b, np.swapaxes(ad, -1, -2) @ g)

    return _result(ad @ bd, (a, b), backward, "matmul")


# ------------------------------------------------------------------ activations

def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    pos = x.data > 0
    out = np.where(pos, x.data, slope * x.data)

    def backward(g):
        _accumulate(x, np.where(pos, g, slope * g))

    return _result(out, (x,), backward, "leaky_relu")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def backward(g):
        _accumulate(x, g * (1.0 - out * out))

    return _result(out, (x,), backward, "tanh")


# ------------------------------------------------------------------- structure

def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = list(xs)
    ref = xs[0].shape
    ax = axis % len(ref)
    for t in xs[1:]:
        if len(t.shape) != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError(f"concat: incompatible shapes {[t.shape for t in xs]} on axis {axis}")
    sizes = [t.shape[ax] for t in xs]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(xs, bounds[:-1], bounds[1:]):
            idx = [slice(None)] * g.ndim
            idx[ax] = slice(lo, hi)
            _accumulate(t, g[tuple(idx)])

    return _result(np.concatenate([t.data for t in xs], axis=ax), tuple(xs), backward, "concat")


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = x.data.reshape(shape)

    def backward(g):
        _accumulate(x, g.reshape(x.shape))

    return _result(out, (x,), backward, "reshape")


def transpose(x: Tensor, axes: tuple[int, ...] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.data.ndim)))
    inv = np.argsort(axes)

    def backward(g):
        _accumulate(x, np.transpose(g, inv))

    return _result(np.transpose(x.data, axes), (x,), backward, "transpose")


def gather(x: Tensor, index) -> Tensor:
    """Rows ``x[index]`` along axis 0."""
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= x.shape[0]):
        raise ShapeError(f"gather: index out of range for {x.shape}")

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        _accumulate(x, full)

    return _result(x.data[index], (x,), backward, "gather")


def segment_sum(x: Tensor, segment_ids, n_segments: int) -> Tensor:
    """Sum rows of ``x`` into ``n_segments`` buckets along axis 0."""
    segment_ids = np.asarray(segment_ids, dtype=np.int64)
    if segment_ids.shape != (x.shape[0],):
        raise ShapeError(f"segment_sum: {segment_ids.shape} ids for input {x.shape}")
    out = np.zeros((n_segments,) + x.shape[1:])
    np.add.at(out, segment_ids, x.data)

    def backward(g):
        _accumulate(x, g[segment_ids])

    return _result(out, (x,), backward, "segment_sum")


def segment_softmax(x: Tensor, segment_ids, n_segments: int) -> Tensor:
    """Softmax of a 1-D score vector independently within each segment."""
    segment_ids = np.asarray(segment_ids, dtype=np.int64)
    if x.data.ndim != 1 or segment_ids.shape != x.shape:
        raise ShapeError(f"segment_softmax: scores {x.shape} vs ids {segment_ids.shape}")
    seg_max = np.full(n_segments, -np.inf)
    np.maximum.at(seg_max, segment_ids, x.data)
    e = np.exp(x.data - seg_max[segment_ids])
    denom = np.zeros(n_segments)
    np.add.at(denom, segment_ids, e)
    out = e / denom[segment_ids]

    def backward(g):
        dots = np.zeros(n_segments)
        np.add.at(dots, segment_ids, g * out)
        _accumulate(x, out * (g - dots[segment_ids]))

    return _result(out, (x,), backward, "segment_softmax")


# -------------------------------------------------------------------- reductions

def sum(x: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    out = x.data.sum(axis=axis)

    def backward(g):
        if axis is None:
            _accumulate(x, np.full(x.shape, float(g)))
        else:
            _accumulate(x, np.broadcast_to(np.expand_dims(g, axis), x.shape))

    return _result(out, (x,), backward, "sum")


def mean(x: Tensor) -> Tensor:
    n = x.size

    def backward(g):
        _accumulate(x, np.full(x.shape, float(g) / n))

    return _result(x.data.mean(), (x,), backward, "mean")


# ---------------------------------------------------------------------- backward

def _topological_order(root: Tensor) -> list[Tensor]:
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
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor) -> None:
    """Populate ``grad`` of every leaf reachable from the scalar ``root``."""
    if root.data.size != 1:
        raise RankError(f"backward: root must be scalar, got shape {root.shape}")
    if not root.requires_grad:
        return
    order = _topological_order(root)
    for node in order:
        if node.parents:
            node.grad = None
    root.grad = np.ones_like(root.data)
    for node in reversed(order):
        if node.backward_fn is not None and node.grad is not None:
            node.backward_fn(node.grad)
