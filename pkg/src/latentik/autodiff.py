"""Reverse-mode automatic differentiation over dense float64 numpy tensors.

The graph is dynamic: each op records its parents and a backward closure on
the output tensor, and ``backward`` walks the tape in reverse topological
order, returning a gradient map instead of mutating global state. Elementwise
ops broadcast only when the smaller shape is a trailing suffix of the larger
one (leading batch dims); anything else needs an explicit reshape.
"""

from __future__ import annotations

from typing import Callable, Iterable, Mapping

import numpy as np

from .errors import ContractError, DimensionError, DomainError


class Tensor:
    __slots__ = ("data", "requires_grad", "_parents", "_backward")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: tuple["Tensor", ...] = (),
        _backward: Callable[[np.ndarray, "_GradMap"], None] | None = None,
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:  # pragma: no cover
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, _lift(other))


class Parameter(Tensor):
    """Trainable tensor. Freezing removes it from every gradient map."""

    __slots__ = ("frozen",)

    def __init__(self, data, frozen: bool = False):
        super().__init__(data, requires_grad=not frozen)
        self.frozen = frozen

    def freeze(self) -> "Parameter":
        self.frozen = True
        self.requires_grad = False
        return self

    def unfreeze(self) -> "Parameter":
        self.frozen = False
        self.requires_grad = True
        return self


_GradMap = dict  # Tensor -> np.ndarray, keyed by identity


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    return Tensor(x)


def _accum(grads: _GradMap, t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    prev = grads.get(t)
    grads[t] = g if prev is None else prev + g


def _needs(*ts: Tensor) -> bool:
    return any(t.requires_grad for t in ts)


def _suffix_reduce(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over the leading axes a suffix-broadcast added."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    if g.shape != shape:
        raise DimensionError(f"gradient shape {g.shape} does not reduce to {shape}")
    return g


def _check_suffix(a: np.ndarray, b: np.ndarray, op: str) -> None:
    small, big = (a, b) if a.ndim <= b.ndim else (b, a)
    if small.shape != big.shape[big.ndim - small.ndim :]:
        raise DimensionError(
            f"{op}: shape {a.shape} vs {b.shape} (only leading-batch broadcast allowed)"
        )


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_suffix(a.data, b.data, "add")
    out = Tensor(a.data + b.data, _needs(a, b), (a, b))

    def backward(g, grads):
        _accum(grads, a, _suffix_reduce(g, a.shape))
        _accum(grads, b, _suffix_reduce(g, b.shape))

    out._backward = backward
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_suffix(a.data, b.data, "sub")
    out = Tensor(a.data - b.data, _needs(a, b), (a, b))

    def backward(g, grads):
        _accum(grads, a, _suffix_reduce(g, a.shape))
        _accum(grads, b, _suffix_reduce(-g, b.shape))

    out._backward = backward
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_suffix(a.data, b.data, "mul")
    out = Tensor(a.data * b.data, _needs(a, b), (a, b))

    def backward(g, grads):
        _accum(grads, a, _suffix_reduce(g * b.data, a.shape))
        _accum(grads, b, _suffix_reduce(g * a.data, b.shape))

    out._backward = backward
    return out


def scale(a: Tensor, s: float) -> Tensor:
    out = Tensor(a.data * s, a.requires_grad, (a,))
    out._backward = lambda g, grads: _accum(grads, a, g * s)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul operands must be at least 2-D")
    try:
        value = np.matmul(a.data, b.data)
    except ValueError as e:
        raise DimensionError(str(e)) from None
    out = Tensor(value, _needs(a, b), (a, b))

    def backward(g, grads):
        if a.requires_grad:
            if b.ndim == 2 and g.ndim > 2:
                # stacked left operand, plain weight: collapse to one GEMM
                ga = (g.reshape(-1, g.shape[-1]) @ b.data.T).reshape(a.shape)
            else:
                ga = _suffix_reduce(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
            _accum(grads, a, ga)
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _suffix_reduce(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
            _accum(grads, b, gb)

    out._backward = backward
    return out


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    value = np.concatenate([t.data for t in tensors], axis=axis)
    out = Tensor(value, _needs(*tensors), tuple(tensors))
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g, grads):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accum(grads, t, piece)

    out._backward = backward
    return out


def getitem(a: Tensor, key) -> Tensor:
    """Basic slicing/indexing; gradient scatters back into a zero tensor."""
    value = a.data[key]
    out = Tensor(np.array(value, copy=True), a.requires_grad, (a,))

    def backward(g, grads):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, key, g)
            _accum(grads, a, full)

    out._backward = backward
    return out


def index_select(a: Tensor, axis: int, indices) -> Tensor:
    idx = np.asarray(indices, dtype=int)
    value = np.take(a.data, idx, axis=axis)
    out = Tensor(value, a.requires_grad, (a,))

    def backward(g, grads):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            key = [slice(None)] * a.ndim
            key[axis] = idx
            np.add.at(full, tuple(key), g)
            _accum(grads, a, full)

    out._backward = backward
    return out


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape), a.requires_grad, (a,))
    out._backward = lambda g, grads: _accum(grads, a, g.reshape(a.shape))
    return out


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    out = Tensor(np.swapaxes(a.data, ax1, ax2), a.requires_grad, (a,))
    out._backward = lambda g, grads: _accum(grads, a, np.swapaxes(g, ax1, ax2))
    return out


def tile(a: Tensor, reps: int, axis: int) -> Tensor:
    """Repeat a size-1 axis ``reps`` times; gradient sums back over the copies."""
    if a.shape[axis] != 1:
        raise DimensionError("tile expects a size-1 axis")
    r = [1] * a.ndim
    r[axis] = reps
    out = Tensor(np.tile(a.data, r), a.requires_grad, (a,))
    out._backward = lambda g, grads: _accum(grads, a, g.sum(axis=axis, keepdims=True))
    return out


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    value = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    out = Tensor(value, a.requires_grad, (a,))

    def backward(g, grads):
        if not keepdims and axis is not None:
            g = np.expand_dims(g, axis)
        _accum(grads, a, np.broadcast_to(g, a.shape) / count)

    out._backward = backward
    return out


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    value = a.data.sum(axis=axis, keepdims=keepdims)
    out = Tensor(value, a.requires_grad, (a,))

    def backward(g, grads):
        if not keepdims and axis is not None:
            g = np.expand_dims(g, axis)
        _accum(grads, a, np.broadcast_to(g, a.shape).copy())

    out._backward = backward
    return out


def square(a: Tensor) -> Tensor:
    out = Tensor(a.data * a.data, a.requires_grad, (a,))
    out._backward = lambda g, grads: _accum(grads, a, 2.0 * a.data * g)
    return out


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise DomainError("sqrt of non-positive value")
    value = np.sqrt(a.data)
    out = Tensor(value, a.requires_grad, (a,))
    out._backward = lambda g, grads: _accum(grads, a, 0.5 / value * g)
    return out


def exp(a: Tensor) -> Tensor:
    value = np.exp(a.data)
    out = Tensor(value, a.requires_grad, (a,))
    out._backward = lambda g, grads: _accum(grads, a, value * g)
    return out


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise DomainError("log of non-positive value")
    out = Tensor(np.log(a.data), a.requires_grad, (a,))
    out._backward = lambda g, grads: _accum(grads, a, g / a.data)
    return out


def tanh(a: Tensor) -> Tensor:
    value = np.tanh(a.data)
    out = Tensor(value, a.requires_grad, (a,))
    out._backward = lambda g, grads: _accum(grads, a, (1.0 - value * value) * g)
    return out


def relu(a: Tensor) -> Tensor:
    value = np.maximum(a.data, 0.0)
    out = Tensor(value, a.requires_grad, (a,))
    out._backward = lambda g, grads: _accum(grads, a, (a.data > 0.0) * g)
    return out


def elu(a: Tensor, alpha: float = 1.0) -> Tensor:
    neg = alpha * (np.exp(np.minimum(a.data, 0.0)) - 1.0)
    value = np.where(a.data > 0.0, a.data, neg)
    out = Tensor(value, a.requires_grad, (a,))

    def backward(g, grads):
        _accum(grads, a, np.where(a.data > 0.0, 1.0, neg + alpha) * g)

    out._backward = backward
    return out


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    value = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(value, a.requires_grad, (a,))

    def backward(g, grads):
        dot = (g * value).sum(axis=axis, keepdims=True)
        _accum(grads, a, value * (g - dot))

    out._backward = backward
    return out


def layer_norm(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis to zero mean / unit variance (no affine)."""
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    value = xc * inv
    out = Tensor(value, a.requires_grad, (a,))

    def backward(g, grads):
        gm = g.mean(axis=-1, keepdims=True)
        gv = (g * value).mean(axis=-1, keepdims=True)
        _accum(grads, a, inv * (g - gm - value * gv))

    out._backward = backward
    return out


def vec_normalize(a: Tensor, eps: float = 1e-24) -> Tensor:
    """x / ||x|| over the last axis; the quaternion-normalize primitive."""
    sq = (a.data * a.data).sum(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(sq + eps)
    value = a.data * inv
    out = Tensor(value, a.requires_grad, (a,))

    def backward(g, grads):
        dot = (g * value).sum(axis=-1, keepdims=True)
        _accum(grads, a, inv * (g - value * dot))

    out._backward = backward
    return out


def cross(a: Tensor, b: Tensor) -> Tensor:
    """Cross product over a trailing axis of size 3."""
    if a.shape[-1] != 3 or b.shape[-1] != 3:
        raise DimensionError("cross requires trailing axis of size 3")
    _check_suffix(a.data, b.data, "cross")
    out = Tensor(np.cross(a.data, b.data), _needs(a, b), (a, b))

    def backward(g, grads):
        if a.requires_grad:
            _accum(grads, a, _suffix_reduce(np.cross(b.data, g), a.shape))
        if b.requires_grad:
            _accum(grads, b, _suffix_reduce(np.cross(g, a.data), b.shape))

    out._backward = backward
    return out


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared error over all elements; scalar output."""
    if a.shape != b.shape:
        raise DimensionError(f"mse: shape {a.shape} vs {b.shape}")
    diff = a.data - b.data
    out = Tensor(np.mean(diff * diff), _needs(a, b), (a, b))
    n = diff.size

    def backward(g, grads):
        base = (2.0 / n) * diff * g
        _accum(grads, a, base)
        _accum(grads, b, -base)

    out._backward = backward
    return out


def backward(loss: Tensor, stop: Iterable[Tensor] = ()) -> dict[Tensor, np.ndarray]:
    """Gradients of a scalar loss for every reachable tensor requiring grad.

    ``stop`` tensors are treated as graph leaves: they receive gradient but
    their own parents are not visited. Pure function of the graph; no state
    is left behind, so repeated calls on the same graph are independent.
    """
    if loss.data.size != 1:
        raise ContractError("backward requires a scalar loss")
    stop_set = set(map(id, stop))

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        if id(node) not in stop_set:
            for parent in node._parents:
                if id(parent) not in visited and parent.requires_grad:
                    stack.append((parent, False))

    grads: dict[Tensor, np.ndarray] = {loss: np.ones_like(loss.data)}
    for node in reversed(topo):
        if node._backward is None or id(node) in stop_set:
            continue
        g = grads.get(node)
        if g is None:
            continue
        node._backward(g, grads)
    return grads


class AdamW:
    """Decoupled-weight-decay adaptive-moment optimizer."""

    def __init__(
        self,
        params: Iterable[Parameter],
        lr: float = 1e-4,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.01,
    ):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = {id(p): np.zeros_like(p.data) for p in self.params}
        self._v = {id(p): np.zeros_like(p.data) for p in self.params}

    def step(self, grads: Mapping[Tensor, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for p in self.params:
            if p.frozen:
                continue
            g = grads.get(p)
            if g is None:
                continue
            m = self._m[id(p)]
            v = self._v[id(p)]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data -= self.lr * (update + self.weight_decay * p.data)
