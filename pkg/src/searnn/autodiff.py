"""Tape-based reverse-mode automatic differentiation over float64 numpy arrays.

Operations executed inside a ``with Tape() as tape:`` block are recorded; outside
of a tape they simply compute values, which is how decoding and roll-outs run.

    >>> x = Parameter(np.array([1.0, 2.0]))
    >>> with Tape() as tape:
    ...     y = sum_(mul(x, x))
    >>> tape.backward(y)
    >>> x.grad
    array([2., 4.])
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

from .exceptions import ContractError, DimensionError, NonFiniteError

__all__ = [
    "Tensor", "Parameter", "Tape", "as_tensor", "current_tape",
    "matmul", "add", "sub", "mul", "neg", "scale", "sigmoid", "tanh",
    "softmax", "log_softmax", "embedding", "concat", "reshape",
    "sum_", "max_",
]

_local = threading.local()


def current_tape() -> "Tape | None":
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    """A dense float64 array, optionally a node of the active tape."""

    __slots__ = ("value", "grad", "name", "requires_grad")
    __array_ufunc__ = None  # make ndarray <op> Tensor dispatch to Tensor

    def __init__(self, value, name=None, requires_grad=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.name = name
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape})"

    def item(self) -> float:
        return float(self.value)

    def numpy(self) -> np.ndarray:
        return self.value

    # Operator sugar so model code reads like math.
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


class Parameter(Tensor):
    """A trainable leaf tensor. Gradients accumulate into ``.grad``."""

    __slots__ = ()

    def __init__(self, value, name=None):
        super().__init__(np.array(value, dtype=np.float64), name=name, requires_grad=True)
        if not np.all(np.isfinite(self.value)):
            raise NonFiniteError(f"parameter {name!r} has non-finite entries")
        self.grad = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of primitive applications for one backward pass.

    A tape belongs to the thread that opened it; independent tapes can live in
    different threads at the same time.
    """

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self):
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.stack.pop()
        return False

    def __len__(self):
        return len(self.records)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], adjoint: Callable):
        out.requires_grad = True
        self.records.append((out, inputs, adjoint))

    def backward(self, root: Tensor, *, check_finite=True):
        """Propagate d(root)/d(.) to every Parameter reachable on this tape.

        ``adjoint(g)`` returns one gradient (or None) per input. Parameter
        gradients are added to ``Parameter.grad``; call ``zero_grad`` between
        optimizer steps.
        """
        if root.value.size != 1 or root.value.ndim > 1:
            raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
        if check_finite and not np.isfinite(root.value).all():
            raise NonFiniteError("non-finite value at backward root")
        grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.value)}
        touched: dict[int, Parameter] = {}
        for out, inputs, adjoint in reversed(self.records):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for inp, gi in zip(inputs, adjoint(g)):
                if gi is None or not inp.requires_grad:
                    continue
                if isinstance(inp, Parameter):
                    inp.grad = inp.grad + gi
                    touched[id(inp)] = inp
                else:
                    key = id(inp)
                    prev = grads.get(key)
                    grads[key] = gi if prev is None else prev + gi
        if check_finite:
            for p in touched.values():
                if not np.isfinite(p.grad).all():
                    raise NonFiniteError(f"non-finite gradient for {p.name!r}")


def _result(value, inputs, adjoint) -> Tensor:
    out = Tensor(value)
    tape = current_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        tape.record(out, inputs, adjoint)
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"cannot broadcast {a.shape} with {b.shape}") from None


# ---------------------------------------------------------------- primitives

def matmul(a, b) -> Tensor:
    """Matrix product; leading dimensions batch like ``np.matmul``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.value.ndim < 2 or b.value.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch {a.shape} x {b.shape}")
    av, bv = a.value, b.value

    def adjoint(g):
        ga = _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape)
        gb = _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape)
        return ga, gb

    return _result(av @ bv, (a, b), adjoint)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    sa, sb = a.shape, b.shape
    return _result(a.value + b.value, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    sa, sb = a.shape, b.shape
    return _result(a.value - b.value, (a, b),
                   lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    av, bv = a.value, b.value
    return _result(av * bv, (a, b),
                   lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result(-a.value, (a,), lambda g: (-g,))


def scale(a, c: float) -> Tensor:
    """Multiply by a Python scalar constant."""
    a = as_tensor(a)
    c = float(c)
    return _result(a.value * c, (a,), lambda g: (g * c,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    # tanh form never overflows
    y = 0.5 * np.tanh(0.5 * a.value) + 0.5
    return _result(y, (a,), lambda g: (g * y * (1.0 - y),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.value)
    return _result(y, (a,), lambda g: (g * (1.0 - y * y),))


def _masked_shift(x, mask):
    if mask is None:
        return x - x.max(axis=-1, keepdims=True)
    if x.shape[-1] == 0 or not np.all(mask.any(axis=-1)):
        raise DimensionError("softmax mask leaves a row empty")
    m = np.where(mask, x, -np.inf).max(axis=-1, keepdims=True)
    return np.where(mask, x - m, -np.inf)


def softmax(a, mask=None) -> Tensor:
    """Softmax over the last axis, max-subtracted.

    With a boolean ``mask`` the normalization runs over masked-in entries only;
    masked-out outputs are exactly 0 and receive exactly zero gradient.
    """
    a = as_tensor(a)
    if a.value.ndim == 0 or a.shape[-1] == 0:
        raise DimensionError("softmax of an empty vector")
    mask = None if mask is None else np.broadcast_to(np.asarray(mask, bool), a.shape)
    e = np.exp(_masked_shift(a.value, mask))
    y = e / e.sum(axis=-1, keepdims=True)

    def adjoint(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result(y, (a,), adjoint)


def log_softmax(a, mask=None) -> Tensor:
    """Log-softmax over the last axis. Masked-out entries are reported as 0."""
    a = as_tensor(a)
    if a.value.ndim == 0 or a.shape[-1] == 0:
        raise DimensionError("log_softmax of an empty vector")
    mask = None if mask is None else np.broadcast_to(np.asarray(mask, bool), a.shape)
    z = _masked_shift(a.value, mask)
    with np.errstate(divide="ignore"):
        lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    y = z - lse
    p = np.exp(y)
    if mask is not None:
        y = np.where(mask, y, 0.0)

    def adjoint(g):
        if mask is not None:
            g = np.where(mask, g, 0.0)
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _result(y, (a,), adjoint)


def embedding(table, indices) -> Tensor:
    """Gather rows of ``table``; the adjoint scatter-adds into the table."""
    table = as_tensor(table)
    idx = np.asarray(indices, dtype=np.intp)
    shape = table.shape

    def adjoint(g):
        gt = np.zeros(shape)
        np.add.at(gt, idx, g)
        return (gt,)

    return _result(table.value[idx], (table,), adjoint)


def concat(tensors: Sequence, axis=-1) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    try:
        y = np.concatenate([t.value for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _result(y, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _result(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def adjoint(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _result(a.value.sum(axis=axis, keepdims=keepdims), (a,), adjoint)


def max_(a, axis=-1) -> Tensor:
    """Max reduction; the subgradient goes to the lowest-index maximizer."""
    a = as_tensor(a)
    x = a.value
    arg = np.argmax(x, axis=axis)
    y = np.take_along_axis(x, np.expand_dims(arg, axis), axis=axis).squeeze(axis)

    def adjoint(g):
        out = np.zeros_like(x)
        np.put_along_axis(out, np.expand_dims(arg, axis), np.expand_dims(g, axis), axis=axis)
        return (out,)

    return _result(y, (a,), adjoint)
