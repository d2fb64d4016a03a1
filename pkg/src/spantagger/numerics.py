"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every operation works on plain ``Tensor`` values. When a :class:`Tape` is
active and at least one input requires a gradient, the operation is recorded
together with a vector-Jacobian product so :func:`backward` can replay the
tape in reverse. Outside a tape the same functions are ordinary numpy math,
which is what evaluation uses.

    >>> w = Tensor(3.0, requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = w * w
    >>> float(backward(tape, loss)[w])
    6.0
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from spantagger.errors import ConfigError, DegenerateNeighborhoodError, ShapeError

LEAKY_SLOPE = 0.01

_local = threading.local()


class Tensor:
    """A float64 array that can take part in gradient recording."""

    __slots__ = ("data", "requires_grad", "name")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __float__(self) -> float:
        return self.item()

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

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

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class _Record:
    __slots__ = ("out", "inputs", "vjp", "op")

    def __init__(self, out: Tensor, inputs: tuple[Tensor, ...], vjp: Callable, op: str):
        self.out = out
        self.inputs = inputs
        self.vjp = vjp
        self.op = op


class Tape:
    """Ordered record of differentiable operations.

    Used as a context manager; tapes nest and are thread-local, so distinct
    threads can record independent tapes over shared read-only parameters.
    """

    def __init__(self):
        self.records: list[_Record] = []

    def __enter__(self) -> "Tape":
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def __len__(self) -> int:
        return len(self.records)

    def backward(self, loss: Tensor, trace: list | None = None) -> dict[Tensor, np.ndarray]:
        return backward(self, loss, trace=trace)


def _active_tape() -> Tape | None:
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def _emit(data, inputs: Sequence[Tensor], vjp: Callable, op: str) -> Tensor:
    out = Tensor(data)
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.records.append(_Record(out, tuple(inputs), vjp, op))
    return out


def backward(tape: Tape, loss: Tensor, trace: list | None = None) -> dict[Tensor, np.ndarray]:
    """Replay ``tape`` in reverse and return gradients of ``loss``.

    The result maps each leaf tensor that requires a gradient (parameters)
    to d loss / d leaf. Leaves with no path to ``loss`` are absent. When
    ``trace`` is given, the index of every replayed record is appended.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    produced = {id(r.out) for r in tape.records}
    leaves: dict[int, Tensor] = {}
    if loss.requires_grad and id(loss) not in produced:
        leaves[id(loss)] = loss
    for idx in range(len(tape.records) - 1, -1, -1):
        rec = tape.records[idx]
        if trace is not None:
            trace.append(idx)
        g = grads.pop(id(rec.out), None)
        if g is None:
            continue
        in_grads = rec.vjp(g)
        for inp, ig in zip(rec.inputs, in_grads):
            if not inp.requires_grad or ig is None:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + ig
            else:
                grads[key] = ig
            if key not in produced:
                leaves[key] = inp
    return {t: grads.get(k, np.zeros_like(t.data)) for k, t in leaves.items()}


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


# --- arithmetic -------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _emit(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _emit(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _emit(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _emit(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)),
        "div",
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _emit(-a.data, (a,), lambda g: (-g,), "neg")


def matmul(a, b) -> Tensor:
    """Matrix product of an m×k and a k×n matrix."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs matrices, got shapes {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    return _emit(
        a.data @ b.data,
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
        "matmul",
    )


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose needs a matrix, got shape {a.shape}")
    return _emit(a.data.T, (a,), lambda g: (g.T,), "transpose")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    return _emit(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),), "reshape")


def getitem(a, index) -> Tensor:
    """Basic or integer-array indexing; repeated indices accumulate gradient."""
    a = as_tensor(a)

    def vjp(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _emit(a.data[index], (a,), vjp, "getitem")


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat of an empty sequence")
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _emit(np.concatenate([t.data for t in ts], axis=axis), ts, vjp, "concat")


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _emit(a.data.sum(axis=axis, keepdims=keepdims), (a,), vjp, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# --- elementwise -------------------------------------------------------------


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _emit(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return _emit(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    return _emit(a.data**p, (a,), lambda g: (g * p * a.data ** (p - 1),), "power")


def relu(a) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    return _emit(np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,), "relu")


def leaky_relu(a, slope: float = LEAKY_SLOPE) -> Tensor:
    a = as_tensor(a)
    scale = np.where(a.data > 0, 1.0, slope)
    return _emit(a.data * scale, (a,), lambda g: (g * scale,), "leaky_relu")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = np.empty_like(a.data)
    pos = a.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ez = np.exp(a.data[~pos])
    out[~pos] = ez / (1.0 + ez)
    return _emit(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _emit(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def activation(t, kind: str, slope: float = LEAKY_SLOPE) -> Tensor:
    """Apply one of ``relu``, ``leakyrelu``, ``sigmoid`` or ``tanh``."""
    if kind == "relu":
        return relu(t)
    if kind == "leakyrelu":
        return leaky_relu(t, slope)
    if kind == "sigmoid":
        return sigmoid(t)
    if kind == "tanh":
        return tanh(t)
    raise ValueError(f"unknown activation {kind!r}")


# --- normalizers -------------------------------------------------------------


def softmax(scores, mask=None, axis: int = -1) -> Tensor:
    """Softmax along ``axis``; masked-out positions come out exactly 0.

    ``mask`` is a boolean array broadcastable to the scores, True where a
    position takes part. A slice with no unmasked position is an error.
    """
    scores = as_tensor(scores)
    x = scores.data
    if mask is None:
        shifted = x - x.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
    else:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if not mask.any(axis=axis).all():
            raise DegenerateNeighborhoodError("softmax over a fully masked slice")
        filled = np.where(mask, x, -np.inf)
        shifted = filled - filled.max(axis=axis, keepdims=True)
        e = np.where(mask, np.exp(shifted), 0.0)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _emit(out, (scores,), vjp, "softmax")


def logsumexp(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    s = np.exp(a.data - m)
    total = s.sum(axis=axis, keepdims=True)
    out_keep = m + np.log(total)
    out = out_keep if keepdims else np.squeeze(out_keep, axis=axis)
    weights = s / total

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (g * weights,)

    return _emit(out, (a,), vjp, "logsumexp")


def dropout(t, rate: float, train: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}", key="dropout")
    t = as_tensor(t)
    if not train or rate == 0.0:
        return t
    keep = (rng.random(t.shape) >= rate) / (1.0 - rate)
    return mul(t, keep)


# --- finite differences ------------------------------------------------------


def relative_error(analytic, numeric, floor: float = 1e-6) -> np.ndarray:
    """Elementwise |a-n| / max(|a|, |n|, floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def central_difference(fn: Callable[[], float], tensor: Tensor, index, eps: float = 1e-4) -> float:
    """(f(x+eps) - f(x-eps)) / 2eps for one entry of ``tensor``, restored afterwards."""
    original = tensor.data[index]
    try:
        tensor.data[index] = original + eps
        up = fn()
        tensor.data[index] = original - eps
        down = fn()
    finally:
        tensor.data[index] = original
    return (up - down) / (2.0 * eps)
