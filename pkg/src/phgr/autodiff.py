"""Small reverse-mode autodiff over dense float64 arrays.

Operations executed while a :class:`Tape` is active are recorded in order;
:func:`backward` replays that record in reverse to accumulate gradients.
Without an active tape the same functions only compute values, which is
what inference uses.

    >>> x = Tensor([1.0, 2.0], requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = (x * x).sum()
    >>> backward(tape, loss)[x]
    array([2., 4.])
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

ATANH_CLAMP = 1.0 - 1e-12

_local = threading.local()


class ContractError(ValueError):
    """Raised when an operation's preconditions are violated."""


class ShapeError(ContractError):
    pass


def _active_tape() -> Tape | None:
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    """A float64 array plus the flag saying whether gradients flow into it."""

    __slots__ = ("value", "requires_grad", "name", "__weakref__")
    __array_priority__ = 1000  # make ndarray <op> Tensor dispatch to Tensor

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return self.value.size

    @property
    def T(self) -> Tensor:
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.value

    def item(self) -> float:
        return float(self.value.reshape(()))

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Node:
    """One recorded primitive application."""

    op: str
    inputs: tuple
    output: Tensor
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    """Ordered record of primitive applications; recording order is topological."""

    nodes: list = field(default_factory=list)

    def __enter__(self) -> Tape:
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.stack.pop()
        return False

    def record(self, node: Node):
        self.nodes.append(node)


def _emit(op: str, value: np.ndarray, inputs: tuple, vjp) -> Tensor:
    tape = _active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(value, requires_grad=needs)
    if needs:
        tape.record(Node(op, inputs, out, vjp))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a: Tensor, b: Tensor):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"shapes {a.shape} and {b.shape} do not broadcast") from exc


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    return _emit("add", a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    return _emit("sub", a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    return _emit("mul", a.value * b.value, (a, b),
                 lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    out = a.value / b.value

    def vjp(g):
        ga = g / b.value
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return _emit("div", out, (a, b), vjp)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _emit("neg", -a.value, (a,), lambda g: (-g,))


def scale(a, s: float) -> Tensor:
    """Multiply by a Python scalar constant."""
    a = as_tensor(a)
    s = float(s)
    return _emit("scale", a.value * s, (a,), lambda g: (g * s,))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _emit("square", a.value * a.value, (a,), lambda g: (2.0 * a.value * g,))


def sqrt(a, floor: float = 0.0) -> Tensor:
    """Square root of ``max(a, floor)``; zero gradient where the floor binds."""
    a = as_tensor(a)
    inside = a.value > floor
    out = np.sqrt(np.where(inside, a.value, floor))
    safe = np.where(out > 0, out, 1.0)
    return _emit("sqrt", out, (a,), lambda g: (np.where(inside & (out > 0), g / (2.0 * safe), 0.0),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.value)
    return _emit("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def atanh(a, clamp: float = ATANH_CLAMP) -> Tensor:
    """``arctanh`` of the argument clipped to ``[-clamp, clamp]``."""
    a = as_tensor(a)
    inside = np.abs(a.value) <= clamp
    x = np.clip(a.value, -clamp, clamp)
    out = np.arctanh(x)
    return _emit("atanh", out, (a,), lambda g: (np.where(inside, g / (1.0 - x * x), 0.0),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return _emit("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.value)
    return _emit("exp", out, (a,), lambda g: (g * out,))


def log(a, floor: float = 1e-300) -> Tensor:
    """Natural log of ``max(a, floor)``; zero gradient where the floor binds."""
    a = as_tensor(a)
    inside = a.value >= floor
    x = np.maximum(a.value, floor)
    return _emit("log", np.log(x), (a,), lambda g: (np.where(inside, g / x, 0.0),))


def clip(a, lo: float | None = None, hi: float | None = None) -> Tensor:
    a = as_tensor(a)
    lo_ = -np.inf if lo is None else lo
    hi_ = np.inf if hi is None else hi
    inside = (a.value >= lo_) & (a.value <= hi_)
    return _emit("clip", np.clip(a.value, lo_, hi_), (a,), lambda g: (np.where(inside, g, 0.0),))


def relu(a) -> Tensor:
    """``max(a, 0)``, the hinge."""
    a = as_tensor(a)
    on = a.value > 0
    return _emit("relu", np.where(on, a.value, 0.0), (a,), lambda g: (np.where(on, g, 0.0),))


def minimum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    pick_a = a.value <= b.value

    def vjp(g):
        return (_unbroadcast(np.where(pick_a, g, 0.0), a.shape),
                _unbroadcast(np.where(pick_a, 0.0, g), b.shape))

    return _emit("minimum", np.minimum(a.value, b.value), (a, b), vjp)


# ---------------------------------------------------------------- reductions

def sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _emit("sum", out, (a,), vjp)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def norm(a, floor: float = 0.0) -> Tensor:
    """L2 norm over the last axis (kept), floored at ``floor``.

    Where the floor binds the gradient is zero, so ``x / norm(x, tiny)`` has
    the correct limiting derivative at ``x = 0``.
    """
    a = as_tensor(a)
    raw = np.sqrt(np.sum(a.value * a.value, axis=-1, keepdims=True))
    inside = raw > floor
    out = np.where(inside, raw, floor)
    safe = np.where(inside & (raw > 0), raw, 1.0)
    return _emit("norm", out, (a,), lambda g: (np.where(inside, g / safe, 0.0) * a.value,))


def dot(a, b) -> Tensor:
    """Inner product over the last axis (kept)."""
    return sum(mul(a, b), axis=-1, keepdims=True)


# ---------------------------------------------------------------- linear algebra & shape

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul needs operands with at least 2 dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    out = np.matmul(a.value, b.value)

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.value, -1, -2))
        gb = np.matmul(np.swapaxes(a.value, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _emit("matmul", out, (a, b), vjp)


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(range(a.ndim))[::-1]
    inv = np.argsort(axes)
    return _emit("transpose", np.transpose(a.value, axes), (a,), lambda g: (np.transpose(g, inv),))


def swap_last(a) -> Tensor:
    a = as_tensor(a)
    axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2)
    return transpose(a, axes)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _emit("reshape", a.value.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    """Concatenate along ``axis`` (the last by default)."""
    tensors = tuple(as_tensor(t) for t in tensors)
    ax = axis % tensors[0].ndim
    lead = [t.shape[:ax] + t.shape[ax + 1:] for t in tensors]
    if any(s != lead[0] for s in lead):
        raise ShapeError(f"cannot concatenate shapes {[t.shape for t in tensors]} on axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    return _emit("concat", np.concatenate([t.value for t in tensors], axis=ax), tensors,
                 lambda g: tuple(np.split(g, cuts, axis=ax)))


def take(a, index) -> Tensor:
    """Basic or advanced indexing; the gradient scatters back with accumulation."""
    a = as_tensor(a)
    out = a.value[index]

    def vjp(g):
        full = np.zeros_like(a.value)
        np.add.at(full, index, g)
        return (full,)

    return _emit("take", out, (a,), vjp)


def gather_rows(a, idx) -> Tensor:
    """Rows ``a[idx]`` of a 2-D tensor (repeats allowed)."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)
    if idx.size and (idx.min() < -a.shape[0] or idx.max() >= a.shape[0]):
        raise ShapeError("gather index out of range")
    out = a.value[idx]

    def vjp(g):
        full = np.zeros_like(a.value)
        np.add.at(full, idx.reshape(-1), g.reshape((-1,) + a.shape[1:]))
        return (full,)

    return _emit("gather_rows", out, (a,), vjp)


def segment_sum(a, segment_ids, num_segments: int) -> Tensor:
    """Sum rows of ``a`` that share a segment id; empty segments give zeros."""
    a = as_tensor(a)
    ids = np.asarray(segment_ids, dtype=np.intp)
    if ids.shape[0] != a.shape[0]:
        raise ShapeError("segment ids must match the leading axis")
    out = np.zeros((num_segments,) + a.shape[1:])
    np.add.at(out, ids, a.value)
    return _emit("segment_sum", out, (a,), lambda g: (g[ids],))


# ---------------------------------------------------------------- softmax family

def softmax(a, axis: int = -1, mask=None) -> Tensor:
    """Softmax over ``axis``; entries where ``mask`` is False get probability 0.

    A slice with no unmasked entry yields all zeros.
    """
    a = as_tensor(a)
    x = a.value
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        x = np.where(mask, x, -np.inf)
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(x - m)
    z = e.sum(axis=axis, keepdims=True)
    out = e / np.where(z > 0, z, 1.0)

    def vjp(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _emit("softmax", out, (a,), vjp)


def segment_softmax(a, segment_ids, num_segments: int) -> Tensor:
    """Softmax of a 1-D tensor within each segment (the index subsets)."""
    a = as_tensor(a)
    ids = np.asarray(segment_ids, dtype=np.intp)
    if a.ndim != 1 or ids.shape != a.shape:
        raise ShapeError("segment_softmax expects a 1-D tensor and matching ids")
    m = np.full(num_segments, -np.inf)
    np.maximum.at(m, ids, a.value)
    e = np.exp(a.value - m[ids])
    z = np.zeros(num_segments)
    np.add.at(z, ids, e)
    out = e / z[ids]

    def vjp(g):
        s = np.zeros(num_segments)
        np.add.at(s, ids, g * out)
        return (out * (g - s[ids]),)

    return _emit("segment_softmax", out, (a,), vjp)


# ---------------------------------------------------------------- backward

def backward(tape: Tape, loss: Tensor, wrt: Sequence[Tensor] = ()) -> dict:
    """Gradients of scalar ``loss`` for every leaf that requires grad.

    Returns a dict keyed by tensor identity.  Leaves recorded on the tape but
    not on a path to ``loss``, and any extra leaves passed in ``wrt``, map to
    zero arrays.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    produced = {id(n.output) for n in tape.nodes}
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    leaves: dict[int, Tensor] = {}
    for t in wrt:
        leaves[id(t)] = t
    for node in reversed(tape.nodes):
        for t in node.inputs:
            if t.requires_grad and id(t) not in produced:
                leaves.setdefault(id(t), t)
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for t, gi in zip(node.inputs, node.vjp(g)):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    if id(loss) in grads and loss.requires_grad and id(loss) not in produced:
        leaves.setdefault(id(loss), loss)
    return {t: grads.get(key, np.zeros_like(t.value)).reshape(t.shape) for key, t in leaves.items()}


@dataclass
class GradCheckResult:
    passed: bool
    max_rel_error: float

    def __bool__(self):
        return self.passed


def grad_check(f: Callable[[Tensor], Tensor], x, step: float = 1e-6, tol: float = 1e-5,
               floor: float = 1e-8) -> GradCheckResult:
    """Compare reverse-mode gradient of ``f`` at ``x`` with central differences.

    Per coordinate the error is ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``.
    Non-finite values anywhere are reported as a failure with infinite error.
    """
    x0 = np.array(as_tensor(x).value, dtype=np.float64)
    try:
        with np.errstate(all="ignore"):
            leaf = Tensor(x0.copy(), requires_grad=True)
            with Tape() as tape:
                out = f(leaf)
            if out.size != 1 or not np.all(np.isfinite(out.value)):
                return GradCheckResult(False, float("inf"))
            analytic = backward(tape, out, wrt=[leaf])[leaf]
            numeric = np.zeros_like(x0)
            flat = numeric.reshape(-1)
            for i in range(x0.size):
                xp = x0.copy().reshape(-1)
                xm = x0.copy().reshape(-1)
                xp[i] += step
                xm[i] -= step
                fp = f(Tensor(xp.reshape(x0.shape))).item()
                fm = f(Tensor(xm.reshape(x0.shape))).item()
                flat[i] = (fp - fm) / (2.0 * step)
    except (FloatingPointError, ZeroDivisionError, OverflowError):
        return GradCheckResult(False, float("inf"))
    if not (np.all(np.isfinite(analytic)) and np.all(np.isfinite(numeric))):
        return GradCheckResult(False, float("inf"))
    den = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    err = float(np.max(np.abs(analytic - numeric) / den)) if x0.size else 0.0
    return GradCheckResult(err <= tol, err)

