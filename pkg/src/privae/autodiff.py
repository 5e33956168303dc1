"""Small dense-tensor reverse-mode autodiff on top of numpy.

Graphs are built by running ordinary Python code on :class:`Tensor` objects.
Every operation records its parents and a closure that pushes the output
gradient back to them; :func:`gradient` walks that tape in reverse
topological order. The tape is rebuilt on every forward call.

All arithmetic is float64.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

LOG_FLOOR = 1e-12
LOG_2PI = math.log(2.0 * math.pi)


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an operation."""


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    # sum out the axes numpy broadcasting added or stretched
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """A node in the computation graph.

    ``data`` is always a float64 ndarray. ``grad`` is filled in by
    :func:`gradient` for nodes that require gradients.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")
    # make numpy defer to the reflected Tensor operators
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), op: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = None
        self.op = op

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'!r})"

    # -- graph construction -----------------------------------------------
    @staticmethod
    def _make(data, parents: tuple, backward, op: str) -> "Tensor":
        needs = any(p.requires_grad for p in parents)
        out = Tensor(data, requires_grad=needs, _parents=parents if needs else (), op=op)
        if needs:
            out._backward = backward
        return out

    def _binary(self, other, op: str, fwd, bwd) -> "Tensor":
        other = as_tensor(other)
        try:
            data = fwd(self.data, other.data)
        except ValueError as exc:
            raise ShapeError(f"{op}: incompatible shapes {self.shape} and {other.shape}") from exc
        a, b = self, other

        def backward(g):
            ga, gb = bwd(g, a.data, b.data, data)
            if a.requires_grad:
                _accumulate(a, _unbroadcast(ga, a.shape))
            if b.requires_grad:
                _accumulate(b, _unbroadcast(gb, b.shape))

        return Tensor._make(data, (a, b), backward, op)

    def _unary(self, op: str, data, local_grad) -> "Tensor":
        a = self

        def backward(g):
            _accumulate(a, g * local_grad())

        return Tensor._make(data, (a,), backward, op)

    # -- arithmetic -------------------------------------------------------
    def __add__(self, other):
        return self._binary(other, "add", np.add, lambda g, a, b, y: (g, g))

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, "sub", np.subtract, lambda g, a, b, y: (g, -g))

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        return self._binary(other, "mul", np.multiply, lambda g, a, b, y: (g * b, g * a))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._binary(
            other, "div", np.divide, lambda g, a, b, y: (g / b, -g * a / (b * b))
        )

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __neg__(self):
        return self._unary("neg", -self.data, lambda: -1.0)

    def __pow__(self, p: float):
        if isinstance(p, Tensor):
            raise TypeError("pow: only constant exponents are supported")
        x = self.data
        return self._unary("pow", x**p, lambda: p * x ** (p - 1))

    def square(self):
        x = self.data
        return self._unary("square", x * x, lambda: 2.0 * x)

    def __matmul__(self, other):
        other = as_tensor(other)
        if self.ndim != 2 or other.ndim != 2 or self.shape[1] != other.shape[0]:
            raise ShapeError(f"matmul: incompatible shapes {self.shape} and {other.shape}")
        a, b = self, other
        data = a.data @ b.data

        def backward(g):
            if a.requires_grad:
                _accumulate(a, g @ b.data.T)
            if b.requires_grad:
                _accumulate(b, a.data.T @ g)

        return Tensor._make(data, (a, b), backward, "matmul")

    # -- elementwise functions --------------------------------------------
    def exp(self):
        y = np.exp(self.data)
        return self._unary("exp", y, lambda: y)

    def log(self):
        """Natural log with the argument floored at ``LOG_FLOOR``."""
        x = np.maximum(self.data, LOG_FLOOR)
        mask = self.data >= LOG_FLOOR
        return self._unary("log", np.log(x), lambda: mask / x)

    def tanh(self):
        y = np.tanh(self.data)
        return self._unary("tanh", y, lambda: 1.0 - y * y)

    def relu(self):
        x = self.data
        return self._unary("relu", np.maximum(x, 0.0), lambda: (x > 0).astype(np.float64))

    def sigmoid(self):
        y = _sigmoid(self.data)
        return self._unary("sigmoid", y, lambda: y * (1.0 - y))

    def softplus(self):
        x = self.data
        return self._unary("softplus", np.logaddexp(0.0, x), lambda: _sigmoid(x))

    def clamp(self, lo: float, hi: float):
        x = self.data
        inside = ((x >= lo) & (x <= hi)).astype(np.float64)
        return self._unary("clamp", np.clip(x, lo, hi), lambda: inside)

    # -- reductions and shape ops -----------------------------------------
    def sum(self, axis=None, keepdims: bool = False):
        a = self
        data = a.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(g, a.shape))

        return Tensor._make(data, (a,), backward, "sum")

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else np.prod([self.shape[i] for i in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def logsumexp(self, axis: int = -1):
        a = self
        x = a.data
        m = np.max(x, axis=axis, keepdims=True)
        m = np.where(np.isfinite(m), m, 0.0)
        s = np.exp(x - m).sum(axis=axis, keepdims=True)
        out = np.squeeze(np.log(s) + m, axis=axis)

        def backward(g):
            w = np.exp(x - m) / s
            _accumulate(a, np.expand_dims(g, axis) * w)

        return Tensor._make(out, (a,), backward, "logsumexp")

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        try:
            data = a.data.reshape(shape)
        except ValueError as exc:
            raise ShapeError(f"reshape: cannot reshape {a.shape} to {shape}") from exc
        return Tensor._make(data, (a,), lambda g: _accumulate(a, g.reshape(a.shape)), "reshape")

    def __getitem__(self, idx):
        a = self
        data = a.data[idx]

        def backward(g):
            full = np.zeros(a.shape)
            np.add.at(full, idx, g)
            _accumulate(a, full)

        return Tensor._make(data, (a,), backward, "getitem")

    @property
    def T(self):
        a = self
        return Tensor._make(a.data.T, (a,), lambda g: _accumulate(a, g.T), "transpose")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad = t.grad + g


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]}") from exc
    bounds = np.cumsum([0] + [t.shape[axis] for t in ts])

    def backward(g):
        for t, lo, hi in zip(ts, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                _accumulate(t, g[tuple(sl)])

    return Tensor._make(data, tuple(ts), backward, "concat")


def affine(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """``x @ W + b`` for a row vector or a matrix of row vectors."""
    x = as_tensor(x)
    squeeze = x.ndim == 1
    if squeeze:
        x = x.reshape(1, -1)
    W = as_tensor(W)
    if W.ndim != 2 or x.shape[1] != W.shape[0]:
        raise ShapeError(f"affine: input shape {x.shape} does not match weight shape {W.shape}")
    out = x @ W + b
    return out.reshape(-1) if squeeze else out


def gaussian_log_density(x, mu, log_var) -> Tensor:
    """Diagonal Gaussian log-density, summed over the last axis."""
    x, mu, log_var = as_tensor(x), as_tensor(mu), as_tensor(log_var)
    quad = (x - mu).square() * (-log_var).exp()
    return ((quad + log_var + LOG_2PI) * -0.5).sum(axis=-1)


# -- parameters and gradients -------------------------------------------------


class ParamSet:
    """Ordered mapping of parameter name to float64 array.

    Insertion order fixes the flattening order, so flattened vectors are
    reproducible for a given architecture.
    """

    def __init__(self, arrays: Mapping[str, np.ndarray] | Iterable[tuple] = ()):
        items = arrays.items() if isinstance(arrays, Mapping) else arrays
        self._arrays: OrderedDict[str, np.ndarray] = OrderedDict(
            (name, np.array(a, dtype=np.float64)) for name, a in items
        )

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __contains__(self, name: str) -> bool:
        return name in self._arrays

    def __iter__(self):
        return iter(self._arrays)

    def __len__(self) -> int:
        return len(self._arrays)

    def items(self):
        return self._arrays.items()

    def names(self) -> list[str]:
        return list(self._arrays)

    @property
    def size(self) -> int:
        return sum(a.size for a in self._arrays.values())

    def flatten(self) -> np.ndarray:
        if not self._arrays:
            return np.zeros(0)
        return np.concatenate([a.ravel() for a in self._arrays.values()])

    def unflatten(self, vec: np.ndarray) -> "ParamSet":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.size,):
            raise ShapeError(f"unflatten: expected vector of length {self.size}, got shape {vec.shape}")
        out, pos = [], 0
        for name, a in self._arrays.items():
            out.append((name, vec[pos : pos + a.size].reshape(a.shape)))
            pos += a.size
        return ParamSet(out)

    def leaves(self) -> "OrderedDict[str, Tensor]":
        """Fresh gradient-tracking leaf tensors, one per parameter."""
        return OrderedDict((n, Tensor(a.copy(), requires_grad=True)) for n, a in self._arrays.items())

    def constants(self) -> "OrderedDict[str, Tensor]":
        return OrderedDict((n, Tensor(a)) for n, a in self._arrays.items())

    def copy(self) -> "ParamSet":
        return ParamSet(self._arrays)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ParamSet) or self.names() != other.names():
            return False
        return all(np.array_equal(self[n], other[n]) for n in self)

    def __repr__(self) -> str:
        shapes = ", ".join(f"{n}: {a.shape}" for n, a in self._arrays.items())
        return f"ParamSet({shapes})"


def _topo_order(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
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


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every tracked node reachable from ``loss``."""
    if loss.data.size != 1:
        raise ShapeError(f"gradient: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    for node in order:
        node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def gradient(loss: Tensor, leaves: Mapping[str, Tensor]) -> np.ndarray:
    """Flattened gradient of a scalar ``loss`` w.r.t. ``leaves`` (in order)."""
    loss = as_tensor(loss)
    if loss.data.size != 1:
        raise ShapeError(f"gradient: loss must be scalar, got shape {loss.shape}")
    for t in leaves.values():
        t.grad = None
    backward(loss)
    parts = [t.grad.ravel() if t.grad is not None else np.zeros(t.data.size) for t in leaves.values()]
    return np.concatenate(parts) if parts else np.zeros(0)


def forward(fn: Callable, params: ParamSet, *inputs, track: bool = True):
    """Evaluate ``fn(leaves, *inputs)`` on freshly built leaves.

    Returns ``(output, leaves)`` so the caller can differentiate.
    """
    leaves = params.leaves() if track else params.constants()
    return fn(leaves, *inputs), leaves


def value_and_grad(fn: Callable, params: ParamSet, *inputs, has_aux: bool = False):
    """Value and flattened gradient of a scalar-valued ``fn(leaves, *inputs)``.

    With ``has_aux`` the function returns ``(loss, aux)`` and the result is
    ``((value, aux), grad)``.
    """
    out, leaves = forward(fn, params, *inputs)
    loss, aux = out if has_aux else (out, None)
    loss = as_tensor(loss)
    g = gradient(loss, leaves)
    value = float(loss.data)
    return ((value, aux), g) if has_aux else (value, g)


def per_sample_value_and_grad(loss_fn: Callable, params: ParamSet, samples: Sequence, has_aux: bool = False):
    """One independent forward/backward pass per sample, in index order."""
    if len(samples) == 0:
        raise ValueError("per_sample_gradients: empty batch")
    values, grads = [], []
    for s in samples:
        v, g = value_and_grad(loss_fn, params, s, has_aux=has_aux)
        values.append(v)
        grads.append(g)
    return values, grads


def per_sample_gradients(loss_fn: Callable, params: ParamSet, samples: Sequence) -> list[np.ndarray]:
    return per_sample_value_and_grad(loss_fn, params, samples)[1]


def numerical_gradient(fn: Callable[[ParamSet], float], params: ParamSet, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of the parameters."""
    theta = params.flatten()
    out = np.empty_like(theta)
    for k in range(theta.size):
        hi, lo = theta.copy(), theta.copy()
        hi[k] += step
        lo[k] -= step
        out[k] = (fn(params.unflatten(hi)) - fn(params.unflatten(lo))) / (2.0 * step)
    return out
