"""Dense float64 reverse-mode automatic differentiation on a linear tape.

Every operation validates shapes, computes eagerly with numpy, and (when any
input lives on a Tape) appends a pullback closure to that tape.  Backward
walks the tape in reverse creation order, which is a reverse topological
order by construction, visiting each node exactly once and summing gradients
at fan-out points.

Kink convention: relu and clip use a zero derivative exactly at their kink
points (the x > 0 mask for relu), so gradients there are the one-sided value
from the flat branch.
"""

from __future__ import annotations

import numpy as np

from .errors import RilirError


class DiffError(RilirError):
    """Base class for autodiff failures."""


class ShapeError(DiffError):
    """Operand shapes incompatible for the requested op."""


class ContractError(DiffError):
    """Op misuse: wrong tape, non-scalar loss, empty input, unknown op."""


class NumericalError(DiffError):
    """An op produced non-finite values."""


class Tensor:
    """A numpy float64 array plus an optional gradient and tape binding.

    Tensors are created either bare (``Tensor(data)``, no recording), via
    ``Tape.leaf`` / ``Tape.param``, or as op outputs.  ``grad`` is populated
    by ``Tape.backward`` for every tensor on the backward path.
    """

    __slots__ = ("data", "grad", "tape", "param_ref")

    def __init__(self, data, tape=None, param_ref=None):
        arr = np.asarray(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NumericalError(f"tensor: non-finite values in input of shape {arr.shape}")
        self.data = arr
        self.grad = None
        self.tape = tape
        self.param_ref = param_ref

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item: tensor of shape {self.shape} is not scalar")
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, tape={'yes' if self.tape else 'no'})"

    # operator sugar over the primitive ops
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(other, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


class Tape:
    """Ordered record of primitive ops with their pullbacks.

    ``backward`` may be called repeatedly on the same tape (gradients are
    reset at the start of each call); each call accumulates parameter-leaf
    gradients into their ParameterSet buffers.
    """

    def __init__(self):
        self._entries = []  # (tensor, parents tuple, pullback or None)

    def __len__(self):
        return len(self._entries)

    def leaf(self, data):
        """Record a non-parameter leaf (inputs, constants, targets)."""
        t = Tensor(data)
        t.tape = self
        self._entries.append((t, (), None))
        return t

    def param(self, pset, name, frozen=False):
        """Record a parameter leaf bound to ``pset[name]``.

        ``frozen=True`` enters the current value as a plain constant: its
        gradient is still computed on the tape but never accumulated into
        the ParameterSet.
        """
        par = pset[name]
        t = Tensor(par.value)
        t.tape = self
        if not frozen:
            t.param_ref = (pset, name)
        self._entries.append((t, (), None))
        return t

    def _record(self, out, parents, pullback):
        self._entries.append((out, parents, pullback))

    def backward(self, loss):
        """Populate ``.grad`` of every tensor upstream of the scalar ``loss``."""
        if not isinstance(loss, Tensor) or loss.tape is not self:
            raise ContractError("backward: loss was not produced on this tape")
        if loss.data.size != 1:
            raise ContractError(f"backward: loss must be scalar, got shape {loss.shape}")
        for t, _, _ in self._entries:
            t.grad = None
        loss.grad = np.ones_like(loss.data)
        for t, parents, pullback in reversed(self._entries):
            if pullback is None or t.grad is None:
                continue
            for parent, g in zip(parents, pullback(t.grad)):
                if g is None:
                    continue
                if parent.grad is None:
                    parent.grad = np.array(g)
                else:
                    parent.grad += g
        for t, _, _ in self._entries:
            if t.param_ref is not None and t.grad is not None:
                pset, name = t.param_ref
                pset.accumulate_grad(name, t.grad)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _common_tape(tensors, op):
    tape = None
    for t in tensors:
        if t.tape is None:
            continue
        if tape is None:
            tape = t.tape
        elif tape is not t.tape:
            raise ContractError(f"{op}: inputs recorded on different tapes")
    return tape


def _emit(op, out_data, parents, pullback):
    if not np.isfinite(out_data).all():
        raise NumericalError(f"{op}: produced non-finite values")
    tape = _common_tape(parents, op)
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    out.tape = tape
    out.param_ref = None
    if tape is not None:
        tape._record(out, parents, pullback)
    return out


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def pullback(g):
        return g @ b.data.T, a.data.T @ g

    return _emit("matmul", out, (a, b), pullback)


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"add: cannot broadcast {a.shape} with {b.shape}") from None
    out = a.data + b.data

    def pullback(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _emit("add", out, (a, b), pullback)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"mul: cannot broadcast {a.shape} with {b.shape}") from None
    out = a.data * b.data

    def pullback(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _emit("mul", out, (a, b), pullback)


def relu(x):
    x = _as_tensor(x)
    out = np.maximum(x.data, 0.0)
    mask = x.data > 0.0

    def pullback(g):
        return (g * mask,)

    return _emit("relu", out, (x,), pullback)


def tanh(x):
    x = _as_tensor(x)
    out = np.tanh(x.data)

    def pullback(g):
        return (g * (1.0 - out * out),)

    return _emit("tanh", out, (x,), pullback)


def sigmoid(x):
    x = _as_tensor(x)
    d = x.data
    out = np.where(d >= 0.0, 1.0 / (1.0 + np.exp(-np.abs(d))), np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))

    def pullback(g):
        return (g * out * (1.0 - out),)

    return _emit("sigmoid", out, (x,), pullback)


def log(x):
    x = _as_tensor(x)
    if (x.data <= 0.0).any():
        raise NumericalError("log: non-positive input")
    out = np.log(x.data)

    def pullback(g):
        return (g / x.data,)

    return _emit("log", out, (x,), pullback)


def square(x):
    x = _as_tensor(x)
    out = x.data * x.data

    def pullback(g):
        return (2.0 * x.data * g,)

    return _emit("square", out, (x,), pullback)


def mean(x):
    x = _as_tensor(x)
    if x.data.size == 0:
        raise ContractError("mean: empty tensor")
    out = np.asarray(x.data.mean())
    n = x.data.size

    def pullback(g):
        return (np.full(x.shape, float(g.reshape(())) / n),)

    return _emit("mean", out, (x,), pullback)


def concat(*tensors, axis=-1):
    ts = tuple(_as_tensor(t) for t in tensors)
    if len(ts) < 2:
        raise ContractError("concat: needs at least two inputs")
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {[t.shape for t in ts]} along axis {axis}: {exc}") from None
    ax = axis if axis >= 0 else out.ndim + axis
    sizes = [t.shape[ax] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def pullback(g):
        return tuple(np.split(g, splits, axis=ax))

    return _emit("concat", out, ts, pullback)


def slice_(x, start, stop, axis=-1):
    x = _as_tensor(x)
    ax = axis if axis >= 0 else x.data.ndim + axis
    if not (0 <= ax < x.data.ndim) or not (0 <= start < stop <= x.shape[ax]):
        raise ShapeError(f"slice: [{start}:{stop}] on axis {axis} of shape {x.shape}")
    index = tuple(slice(None) if i != ax else slice(start, stop) for i in range(x.data.ndim))
    out = x.data[index].copy()

    def pullback(g):
        full = np.zeros(x.shape)
        full[index] = g
        return (full,)

    return _emit("slice", out, (x,), pullback)


def scale(x, c):
    x = _as_tensor(x)
    c = float(c)
    out = x.data * c

    def pullback(g):
        return (g * c,)

    return _emit("scale", out, (x,), pullback)


def clip(x, lo, hi):
    x = _as_tensor(x)
    lo, hi = float(lo), float(hi)
    if not lo < hi:
        raise ContractError(f"clip: empty interval [{lo}, {hi}]")
    out = np.clip(x.data, lo, hi)
    mask = (x.data > lo) & (x.data < hi)

    def pullback(g):
        return (g * mask,)

    return _emit("clip", out, (x,), pullback)


_OPS = {
    "matmul": matmul,
    "add": add,
    "mul": mul,
    "relu": relu,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "log": log,
    "square": square,
    "mean": mean,
    "concat": concat,
    "slice": slice_,
    "scale": scale,
    "clip": clip,
}


def forward_op(kind, *inputs, **kwargs):
    """Dispatch a primitive op by name; see module doc for the kind list."""
    try:
        fn = _OPS[kind]
    except KeyError:
        raise ContractError(f"forward_op: unknown kind {kind!r}; expected one of {sorted(_OPS)}") from None
    return fn(*inputs, **kwargs)
