"""Minimal reverse-mode automatic differentiation and dense networks.

Tensors wrap numpy arrays. Every operation records its parents and a
closure that pushes the output gradient back to them; :func:`backward`
walks the recorded graph in reverse topological order.
"""

from __future__ import annotations

import json
import math
import struct
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit

from synthgen.errors import FitError


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, value, requires_grad=False, name=None, _parents=(), _backward=None):
        self.value = np.asarray(value, dtype=float)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward = _backward

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape})"

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=float, copy=True)
        else:
            self.grad += g

    # arithmetic -----------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        out_val = self.value + other.value

        def back(g):
            self._accumulate(_unbroadcast(g, self.shape))
            other._accumulate(_unbroadcast(g, other.shape))

        return _node(out_val, (self, other), back)

    __radd__ = __add__

    def __neg__(self):
        return _node(-self.value, (self,), lambda g: self._accumulate(-g))

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self.value, other.value

        def back(g):
            self._accumulate(_unbroadcast(g * b, self.shape))
            other._accumulate(_unbroadcast(g * a, other.shape))

        return _node(a * b, (self, other), back)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        a, b = self.value, other.value

        def back(g):
            self._accumulate(_unbroadcast(g / b, self.shape))
            other._accumulate(_unbroadcast(-g * a / (b * b), other.shape))

        return _node(a / b, (self, other), back)

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, k: float):
        a = self.value
        return _node(a**k, (self,), lambda g: self._accumulate(g * k * a ** (k - 1)))

    def __matmul__(self, other):
        other = as_tensor(other)
        a, b = self.value, other.value

        def back(g):
            self._accumulate(g @ b.T)
            other._accumulate(a.T @ g)

        return _node(a @ b, (self, other), back)

    @property
    def T(self):
        return _node(self.value.T, (self,), lambda g: self._accumulate(g.T))

    # reductions ---------------------------------------------------------

    def sum(self, axis=None):
        shape = self.shape

        def back(g):
            if axis is not None:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, shape))

        return _node(self.value.sum(axis=axis), (self,), back)

    def mean(self, axis=None):
        count = self.value.size if axis is None else self.shape[axis]
        return self.sum(axis) * (1.0 / count)

    # elementwise functions --------------------------------------------------

    def exp(self):
        out = np.exp(self.value)
        return _node(out, (self,), lambda g: self._accumulate(g * out))

    def log(self):
        a = self.value
        return _node(np.log(a), (self,), lambda g: self._accumulate(g / a))

    def square(self):
        a = self.value
        return _node(a * a, (self,), lambda g: self._accumulate(2.0 * g * a))

    def tanh(self):
        out = np.tanh(self.value)
        return _node(out, (self,), lambda g: self._accumulate(g * (1.0 - out * out)))

    def relu(self):
        mask = self.value > 0
        return _node(self.value * mask, (self,), lambda g: self._accumulate(g * mask))

    def sigmoid(self):
        out = expit(self.value)
        return _node(out, (self,), lambda g: self._accumulate(g * out * (1.0 - out)))

    def softplus(self):
        a = self.value
        return _node(np.logaddexp(0.0, a), (self,), lambda g: self._accumulate(g * expit(a)))

    def identity(self):
        return self

    def columns(self, idx):
        """Select columns of a 2-D tensor."""
        idx = np.asarray(idx, dtype=int)
        shape = self.shape

        def back(g):
            full = np.zeros(shape)
            full[:, idx] = g
            self._accumulate(full)

        return _node(self.value[:, idx], (self,), back)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value, parents, back) -> Tensor:
    parents = tuple(parents)
    return Tensor(value, any(p.requires_grad or p._parents for p in parents), None, parents, back)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def back(g):
        for t, piece in zip(tensors, np.split(g, cuts, axis=axis)):
            t._accumulate(piece)

    return _node(np.concatenate([t.value for t in tensors], axis=axis), tensors, back)


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every tensor that ``loss`` depends on."""
    if not loss._parents:
        raise RuntimeError("backward() needs a tensor produced by a recorded forward pass")
    if loss.value.size != 1:
        raise ValueError("backward() expects a scalar loss")
    order, seen = [], set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        stack.extend((p, False) for p in node._parents if id(p) not in seen)
    for node in order:
        if node._parents:
            node.grad = None
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# -- layers -------------------------------------------------------------------

ACTIVATIONS = ("identity", "tanh", "relu", "sigmoid", "softplus")


class DenseLayer:
    """``h = g(h_prev @ W.T + b)`` for a batch of row vectors."""

    def __init__(self, n_in: int, n_out: int, activation: str = "tanh", rng=None, name="dense"):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        if n_in < 1 or n_out < 1:
            raise ValueError("layer sizes must be positive")
        rng = np.random.default_rng(rng)
        limit = math.sqrt(6.0 / (n_in + n_out))
        self.W = Tensor(rng.uniform(-limit, limit, (n_out, n_in)), True, f"{name}.W")
        self.b = Tensor(np.zeros(n_out), True, f"{name}.b")
        self.activation = activation

    @property
    def n_in(self):
        return self.W.shape[1]

    @property
    def n_out(self):
        return self.W.shape[0]

    def parameters(self):
        return [self.W, self.b]

    def __call__(self, h):
        return layer_forward(h, self)


def layer_forward(h, layer: DenseLayer) -> Tensor:
    h = as_tensor(h)
    if h.shape[-1] != layer.n_in:
        raise ValueError(f"{layer.W.name}: input width {h.shape[-1]} != {layer.n_in}")
    return getattr(h @ layer.W.T + layer.b, layer.activation)()


class Mlp:
    def __init__(self, sizes: Sequence[int], activation="tanh", out_activation=None, rng=None, name="mlp"):
        rng = np.random.default_rng(rng)
        self.layers = []
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = i == len(sizes) - 2
            act = out_activation if (last and out_activation) else activation
            self.layers.append(DenseLayer(a, b, act, rng, f"{name}.{i}"))

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def __call__(self, h):
        for layer in self.layers:
            h = layer(h)
        return h


# -- optimizer ----------------------------------------------------------------


class Adam:
    def __init__(self, params: Iterable[Tensor], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        grads = []
        for p in self.params:
            g = np.zeros_like(p.value) if p.grad is None else p.grad
            if not np.all(np.isfinite(g)):
                raise FitError(f"non-finite gradient for parameter {p.name}")
            grads.append(g)
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adam_step(params, state: Adam):
    """Functional alias: apply one Adam update using the gradients stored on ``params``."""
    if [id(p) for p in params] != [id(p) for p in state.params]:
        raise ValueError("optimizer state belongs to different parameters")
    state.step()
    return params


# -- binary parameter files ---------------------------------------------------

MAGIC = b"SGNN"
FORMAT_VERSION = 1


def save_tensors(path, tensors: dict, header: dict | None = None) -> None:
    """Write named arrays as ``SGNN`` | version | JSON header | shapes + float64 LE data."""
    header = dict(header or {})
    header["tensors"] = list(tensors)
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(tensors)))
        for arr in tensors.values():
            arr = np.asarray(arr, dtype="<f8")
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes(order="C"))


def load_tensors(path) -> tuple[dict, dict]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not an SGNN parameter file")
    version, hlen = struct.unpack_from("<II", data, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    pos = 12
    header = json.loads(data[pos : pos + hlen].decode("utf-8"))
    pos += hlen
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    names = header.get("tensors", [f"t{i}" for i in range(count)])
    out = {}
    for name in names[:count]:
        (ndim,) = struct.unpack_from("<I", data, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        out[name] = np.frombuffer(data, "<f8", size, pos).reshape(shape).copy()
        pos += 8 * size
    return header, out
