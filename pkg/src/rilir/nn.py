"""Parameter storage, Adam, MLP layers, serialization, gradient checking."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    ContractError,
    NumericalError,
    Tape,
    Tensor,
    add,
    matmul,
    relu,
    sigmoid,
    tanh,
)

PARAMSET_MAGIC = b"RILIRPS1"


class Param:
    """A tensor with paired gradient and Adam moment buffers."""

    __slots__ = ("value", "grad", "m", "v")

    def __init__(self, value):
        self.value = np.array(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)


class ParameterSet:
    """Named map of Params sharing one Adam step counter."""

    def __init__(self):
        self._params = {}
        self.step_count = 0

    def add(self, name, value):
        if name in self._params:
            raise ContractError(f"parameter {name!r} already registered")
        self._params[name] = Param(value)
        return self._params[name]

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def accumulate_grad(self, name, g):
        par = self._params[name]
        if g.shape != par.value.shape:
            raise ContractError(f"gradient shape {g.shape} != parameter {name!r} shape {par.value.shape}")
        par.grad += g

    def zero_grad(self):
        for par in self._params.values():
            par.grad[...] = 0.0

    def adam_step(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        """One bias-corrected Adam update on every parameter; zeroes grads."""
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - beta1**t
        c2 = 1.0 - beta2**t
        for par in self._params.values():
            par.m *= beta1
            par.m += (1.0 - beta1) * par.grad
            par.v *= beta2
            par.v += (1.0 - beta2) * par.grad * par.grad
            par.value -= lr * (par.m / c1) / (np.sqrt(par.v / c2) + eps)
            par.grad[...] = 0.0

    def clone(self):
        """Deep copy of values; gradient and moment buffers start at zero."""
        out = ParameterSet()
        for name, par in self._params.items():
            out.add(name, par.value)
        return out

    def copy_from(self, other):
        for name, par in self._params.items():
            par.value[...] = other[name].value

    def polyak_from(self, other, rate):
        """value <- (1 - rate) * value + rate * other."""
        for name, par in self._params.items():
            par.value *= 1.0 - rate
            par.value += rate * other[name].value

    def flat_values(self):
        return np.concatenate([par.value.ravel() for par in self._params.values()]) if self._params else np.zeros(0)

    def load_flat(self, vec):
        offset = 0
        for par in self._params.values():
            n = par.value.size
            par.value[...] = np.asarray(vec[offset : offset + n]).reshape(par.value.shape)
            offset += n
        if offset != len(vec):
            raise ContractError(f"flat vector length {len(vec)} != parameter count {offset}")

    def state_hash(self):
        """Hex digest of names, shapes, and exact value bytes."""
        h = hashlib.sha256()
        for name in sorted(self._params):
            par = self._params[name]
            h.update(name.encode("utf-8"))
            h.update(repr(par.value.shape).encode("utf-8"))
            h.update(np.ascontiguousarray(par.value, dtype="<f8").tobytes())
        return h.hexdigest()

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(PARAMSET_MAGIC)
            for name in sorted(self._params):
                par = self._params[name]
                encoded = name.encode("utf-8")
                fh.write(struct.pack("<I", len(encoded)))
                fh.write(encoded)
                fh.write(struct.pack("<I", par.value.ndim))
                fh.write(struct.pack(f"<{par.value.ndim}I", *par.value.shape))
                fh.write(np.ascontiguousarray(par.value, dtype="<f8").tobytes())


def load_parameter_set(path):
    """Read a ParameterSet binary; moment buffers come back zeroed."""
    with open(path, "rb") as fh:
        magic = fh.read(len(PARAMSET_MAGIC))
        if magic != PARAMSET_MAGIC:
            raise ContractError(f"{path}: bad magic {magic!r}")
        out = ParameterSet()
        while True:
            head = fh.read(4)
            if not head:
                break
            (name_len,) = struct.unpack("<I", head)
            name = fh.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{rank}I", fh.read(4 * rank)) if rank else ()
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(shape)
            out.add(name, data)
    return out


_ACTIVATIONS = {"relu": relu, "tanh": tanh, "sigmoid": sigmoid, "linear": None}


class Mlp:
    """Fully connected layers over a ParameterSet, built on a Tape on demand.

    Weights are Xavier-uniform, biases zero.  ``prefix`` namespaces the
    parameters so several networks can share one ParameterSet.
    """

    def __init__(self, params, prefix, dims, hidden_activation="relu", head_activation="linear", rng=None, init=True):
        if len(dims) < 2:
            raise ContractError(f"{prefix}: need at least input and output dims, got {dims}")
        for act in (hidden_activation, head_activation):
            if act not in _ACTIVATIONS:
                raise ContractError(f"{prefix}: unknown activation {act!r}")
        self.params = params
        self.prefix = prefix
        self.dims = list(dims)
        self.hidden_activation = hidden_activation
        self.head_activation = head_activation
        if init:
            if rng is None:
                raise ContractError(f"{prefix}: rng required to initialize")
            for i, (n_in, n_out) in enumerate(zip(dims[:-1], dims[1:])):
                limit = np.sqrt(6.0 / (n_in + n_out))
                params.add(f"{prefix}.w{i}", rng.uniform(-limit, limit, size=(n_in, n_out)))
                params.add(f"{prefix}.b{i}", np.zeros((1, n_out)))

    @property
    def n_layers(self):
        return len(self.dims) - 1

    def forward(self, tape, x, params=None, frozen=False):
        """Forward pass; ``tape=None`` runs unrecorded.

        ``params`` overrides the bound ParameterSet (same names), used for
        target-network copies sharing this architecture.
        """
        pset = self.params if params is None else params
        h = x if isinstance(x, Tensor) else Tensor(x)
        if h.data.ndim != 2 or h.shape[1] != self.dims[0]:
            raise ContractError(f"{self.prefix}: input shape {h.shape} != (batch, {self.dims[0]})")
        for i in range(self.n_layers):
            if tape is None:
                w = Tensor(pset[f"{self.prefix}.w{i}"].value)
                b = Tensor(pset[f"{self.prefix}.b{i}"].value)
            else:
                w = tape.param(pset, f"{self.prefix}.w{i}", frozen=frozen)
                b = tape.param(pset, f"{self.prefix}.b{i}", frozen=frozen)
            h = add(matmul(h, w), b)
            act = self.hidden_activation if i < self.n_layers - 1 else self.head_activation
            fn = _ACTIVATIONS[act]
            if fn is not None:
                h = fn(h)
        return h

    def forward_array(self, x, params=None):
        return self.forward(None, x, params=params).data


def mlp_from_params(params, prefix, hidden_activation="relu", head_activation="linear"):
    """Rebuild an Mlp around already-registered parameters.

    Layer dimensions are recovered from the weight shapes, so a network
    loaded from a checkpoint needs no architecture bookkeeping on the side.
    """
    dims = []
    i = 0
    while f"{prefix}.w{i}" in params:
        w = params[f"{prefix}.w{i}"].value
        if i == 0:
            dims.append(w.shape[0])
        dims.append(w.shape[1])
        i += 1
    if len(dims) < 2:
        raise ContractError(f"no layers found under prefix {prefix!r}")
    return Mlp(params, prefix, dims, hidden_activation, head_activation, init=False)


@dataclass(frozen=True)
class GradCheckReport:
    """Result of a central-difference gradient check.

    ``excluded`` lists coordinates skipped because the one-sided differences
    disagreed (a kink of relu/clip between the probe points); the max is
    taken over the remaining coordinates.
    """

    max_rel_error: float
    excluded: tuple

    def __float__(self):
        return self.max_rel_error


def grad_check(f, point, step=1e-5, kink_tol=1e-3):
    """Compare analytic input gradients of ``f`` against central differences.

    ``f(tape, x)`` must return a scalar Tensor built from ``x``.  Relative
    error per coordinate is |analytic - central| / max(1, |analytic|).
    """
    x0 = np.asarray(point, dtype=np.float64)
    if not np.isfinite(x0).all():
        raise NumericalError("grad_check: non-finite probe point")
    tape = Tape()
    xt = tape.leaf(x0)
    loss = f(tape, xt)
    if loss.data.size != 1:
        raise ContractError(f"grad_check: f must be scalar-valued, got shape {loss.shape}")
    tape.backward(loss)
    analytic = np.zeros_like(x0) if xt.grad is None else xt.grad.copy()

    def value_at(v):
        out = f(None, Tensor(v))
        val = float(out.data.reshape(()))
        if not np.isfinite(val):
            raise NumericalError("grad_check: non-finite value at probe point")
        return val

    f0 = value_at(x0)
    flat = x0.ravel()
    analytic_flat = analytic.ravel()
    max_rel = 0.0
    excluded = []
    for j in range(flat.size):
        shifted = flat.copy()
        shifted[j] = flat[j] + step
        f_plus = value_at(shifted.reshape(x0.shape))
        shifted[j] = flat[j] - step
        f_minus = value_at(shifted.reshape(x0.shape))
        forward = (f_plus - f0) / step
        backward = (f0 - f_minus) / step
        if abs(forward - backward) > kink_tol * max(1.0, abs(forward), abs(backward)):
            excluded.append(j)
            continue
        central = (f_plus - f_minus) / (2.0 * step)
        rel = abs(analytic_flat[j] - central) / max(1.0, abs(analytic_flat[j]))
        max_rel = max(max_rel, rel)
    return GradCheckReport(max_rel_error=max_rel, excluded=tuple(excluded))
