"""Dense float64 tensors with a tape-based reverse-mode gradient.

Operations record themselves on the innermost active :class:`GradientTape`.
``tape.gradient`` walks the record backwards, so the recorded order is
already a valid topological order and no graph sort is needed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np


class UnsupportedOpError(RuntimeError):
    pass


class Tensor:
    """An immutable float64 array that may participate in differentiation."""

    __slots__ = ("data", "requires_grad", "name")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        t = cls.__new__(cls)
        arr = np.asarray(arr, dtype=np.float64)
        arr.flags.writeable = False
        t.data, t.requires_grad, t.name = arr, requires_grad, None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class _Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    ctx: dict[str, Any] = field(default_factory=dict)


_TAPES: list["GradientTape"] = []


class GradientTape:
    """Records differentiable operations executed inside a ``with`` block.

    >>> x = Tensor([1.0, 2.0], requires_grad=True)
    >>> with GradientTape() as tape:
    ...     y = dot(x, x)
    >>> tape.gradient(y, [x])[0]
    array([2., 4.])
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "GradientTape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def record(self, op: str, inputs: Sequence[Tensor], output: Tensor, **ctx) -> None:
        self.nodes.append(_Node(op, tuple(inputs), output, ctx))

    def gradient(self, target: Tensor, sources: Sequence[Tensor]) -> list[np.ndarray]:
        if target.data.size != 1:
            raise ValueError("gradient target must be a scalar")
        grads: dict[int, np.ndarray] = {id(target): np.ones_like(target.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            rule = _VJP.get(node.op)
            if rule is None:
                raise UnsupportedOpError(f"no gradient rule for op '{node.op}'")
            in_grads = rule(node, g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        return [grads.get(id(s), np.zeros_like(s.data)) for s in sources]


def _emit(op: str, inputs: Sequence[Tensor], out: np.ndarray, **ctx) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    result = Tensor._wrap(out, needs)
    if needs and _TAPES:
        _TAPES[-1].record(op, inputs, result, **ctx)
    return result


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


_VJP: dict[str, Callable[[_Node], tuple]] = {}


def _rule(op: str):
    def register(fn):
        _VJP[op] = fn
        return fn

    return register


# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _emit("add", (a, b), a.data + b.data)


@_rule("add")
def _add_vjp(node, g):
    a, b = node.inputs
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _emit("sub", (a, b), a.data - b.data)


@_rule("sub")
def _sub_vjp(node, g):
    a, b = node.inputs
    return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _emit("mul", (a, b), a.data * b.data)


@_rule("mul")
def _mul_vjp(node, g):
    a, b = node.inputs
    ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
    gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
    return ga, gb


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _emit("neg", (a,), -a.data)


@_rule("neg")
def _neg_vjp(node, g):
    return (-g,)


# linear algebra and reductions


def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes, broadcasting the rest.

    One-dimensional operands follow numpy: a vector on the left is a row,
    a vector on the right is a column, and the added axis is dropped.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 1:
        return reshape(matmul(reshape(a, (1, a.shape[0])), b), _drop_axis(b, -2))
    if b.ndim == 1:
        return reshape(matmul(a, reshape(b, (b.shape[0], 1))), a.shape[:-1])
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return _emit("matmul", (a, b), np.matmul(a.data, b.data))


def _drop_axis(b: Tensor, axis: int) -> tuple[int, ...]:
    shape = list(b.shape)
    del shape[axis]
    return tuple(shape)


@_rule("matmul")
def _matmul_vjp(node, g):
    a, b = node.inputs
    ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) if a.requires_grad else None
    gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape) if b.requires_grad else None
    return ga, gb


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    return _emit("sum", (a,), a.data.sum(axis=axis, keepdims=keepdims), axis=axis, keepdims=keepdims)


@_rule("sum")
def _sum_vjp(node, g):
    (a,) = node.inputs
    axis, keepdims = node.ctx["axis"], node.ctx["keepdims"]
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, a.shape).copy(),)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / float(count))


def dot(a, b) -> Tensor:
    """Inner product along the last axis."""
    return sum(mul(a, b), axis=-1)


# shape manipulation


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _emit("reshape", (a,), a.data.reshape(shape))


@_rule("reshape")
def _reshape_vjp(node, g):
    return (g.reshape(node.inputs[0].shape),)


def expand_dims(a, axis: int) -> Tensor:
    a = as_tensor(a)
    return reshape(a, np.expand_dims(a.data, axis).shape)


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(range(a.ndim))[::-1]
    return _emit("transpose", (a,), np.transpose(a.data, axes), axes=tuple(axes))


@_rule("transpose")
def _transpose_vjp(node, g):
    return (np.transpose(g, np.argsort(node.ctx["axes"])),)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    return _emit("concat", ts, out, axis=axis, splits=np.cumsum(sizes)[:-1])


@_rule("concat")
def _concat_vjp(node, g):
    return tuple(np.split(g, node.ctx["splits"], axis=node.ctx["axis"]))


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    return _emit("getitem", (a,), a.data[index], index=index)


@_rule("getitem")
def _getitem_vjp(node, g):
    index = node.ctx["index"]
    out = np.zeros(node.inputs[0].shape)
    if _is_basic(index):
        out[index] = g
    else:
        np.add.at(out, index, g)
    return (out,)


def _is_basic(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(p is None or p is Ellipsis or isinstance(p, (slice, int, np.integer)) for p in parts)


def take(table, indices) -> Tensor:
    """Row gather: ``table[indices]`` for an integer array of any shape."""
    table = as_tensor(table)
    idx = np.asarray(indices, dtype=np.int64)
    return _emit("take", (table,), table.data[idx], indices=idx)


@_rule("take")
def _take_vjp(node, g):
    table = node.inputs[0]
    out = np.zeros(table.shape)
    idx = node.ctx["indices"].reshape(-1)
    if idx.size == 0:
        return (out,)
    rows = g.reshape((idx.size,) + table.shape[1:])
    # sort + segment sums: same result as np.add.at, far faster
    order = np.argsort(idx, kind="stable")
    uniq, starts = np.unique(idx[order], return_index=True)
    out[uniq] = np.add.reduceat(rows[order], starts, axis=0)
    return (out,)


# nonlinearities


def tanh(a) -> Tensor:
    a = as_tensor(a)
    return _emit("tanh", (a,), np.tanh(a.data))


@_rule("tanh")
def _tanh_vjp(node, g):
    y = node.output.data
    return (g * (1.0 - y * y),)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    return _emit("sigmoid", (a,), _sigmoid(a.data))


@_rule("sigmoid")
def _sigmoid_vjp(node, g):
    y = node.output.data
    return (g * y * (1.0 - y),)


def relu(a) -> Tensor:
    a = as_tensor(a)
    return _emit("relu", (a,), np.maximum(a.data, 0.0))


@_rule("relu")
def _relu_vjp(node, g):
    return (g * (node.inputs[0].data > 0),)


def exp(a) -> Tensor:
    a = as_tensor(a)
    return _emit("exp", (a,), np.exp(a.data))


@_rule("exp")
def _exp_vjp(node, g):
    return (g * node.output.data,)


def log(a) -> Tensor:
    a = as_tensor(a)
    return _emit("log", (a,), np.log(a.data))


@_rule("log")
def _log_vjp(node, g):
    return (g / node.inputs[0].data,)


def _check_scores(x: np.ndarray, axis: int) -> None:
    if x.shape[axis] == 0:
        raise ValueError("empty score vector")


def softmax(a, axis: int = -1, mask=None) -> Tensor:
    """Max-shifted softmax; entries where ``mask`` is False get exactly 0.

    At least one entry per slice must be unmasked.
    """
    a = as_tensor(a)
    x = a.data
    _check_scores(x, axis)
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        x = np.where(mask, x, -np.inf)
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    p = z / z.sum(axis=axis, keepdims=True)
    return _emit("softmax", (a,), p, axis=axis)


@_rule("softmax")
def _softmax_vjp(node, g):
    p, axis = node.output.data, node.ctx["axis"]
    return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    x = a.data
    _check_scores(x, axis)
    shifted = x - x.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    return _emit("log_softmax", (a,), out, axis=axis)


@_rule("log_softmax")
def _log_softmax_vjp(node, g):
    y, axis = node.output.data, node.ctx["axis"]
    return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)


def dropout(a, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout: survivors are scaled by ``1 / (1 - rate)`` at train time."""
    a = as_tensor(a)
    if not training or rate == 0.0:
        return a
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return _emit("dropout", (a,), a.data * keep, scale=keep)


@_rule("dropout")
def _dropout_vjp(node, g):
    return (g * node.ctx["scale"],)
