"""Minimal dense-tensor numerics with reverse-mode differentiation.

Everything is float64 numpy under the hood.  Operations record themselves
onto a global tape; ``backward`` replays the tape in reverse and accumulates
gradients into every tensor with ``requires_grad`` set.  Desk-scale only:
no GPU, no mixed precision, broadcasting limited to numpy semantics.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np


class Tensor:
    """A dense array plus an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "_on_tape")

    # make numpy defer to our reflected operators instead of broadcasting
    # over the Tensor object
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._on_tape = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; implementations live below
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


class TapeRecord:
    """One tape entry: the output tensor, its inputs, and a backward rule.

    The backward rule receives the output gradient and returns one gradient
    array (or None) per input, in order.
    """

    __slots__ = ("inputs", "output", "backward_rule")

    def __init__(self, inputs: Sequence[Tensor], output: Tensor,
                 backward_rule: Callable[[np.ndarray], Sequence[np.ndarray | None]]):
        self.inputs = tuple(inputs)
        self.output = output
        self.backward_rule = backward_rule


class ComputationTape:
    """Ordered op records; construction order is a topological order."""

    def __init__(self):
        self.records: list[TapeRecord] = []
        self.enabled = True

    def record(self, inputs: Sequence[Tensor], output: Tensor, backward_rule) -> None:
        if not self.enabled:
            return
        if any(t._on_tape for t in inputs):
            output._on_tape = True
            self.records.append(TapeRecord(inputs, output, backward_rule))

    def clear(self) -> None:
        self.records.clear()


_TAPE = ComputationTape()


def get_tape() -> ComputationTape:
    return _TAPE


class no_grad:
    """Context manager disabling tape recording (inference mode)."""

    def __enter__(self):
        self._prev = _TAPE.enabled
        _TAPE.enabled = False
        return self

    def __exit__(self, *exc):
        _TAPE.enabled = self._prev
        return False


def backward(loss: Tensor) -> None:
    """Populate grads of every requires_grad tensor reachable from loss.

    The tape is cleared afterwards, so each forward pass supports exactly
    one backward pass.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for rec in reversed(_TAPE.records):
        g_out = grads.pop(id(rec.output), None)
        if g_out is None:
            continue
        in_grads = rec.backward_rule(g_out)
        for t, g in zip(rec.inputs, in_grads):
            if g is None or not t._on_tape:
                continue
            if t.requires_grad:
                t.accumulate_grad(g)
            else:
                prev = grads.get(id(t))
                if prev is None:
                    grads[id(t)] = np.array(g, dtype=np.float64, copy=True)
                else:
                    prev += g
    _TAPE.clear()


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient g down to the given (numpy-broadcast) input shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data + b.data)
    _TAPE.record([a, b], out, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))
    return out


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data * b.data)
    _TAPE.record([a, b], out, lambda g: (_unbroadcast(g * b.data, a.shape),
                                         _unbroadcast(g * a.data, b.shape)))
    return out


def power(a, p: float) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data ** p)
    _TAPE.record([a], out, lambda g: (g * p * a.data ** (p - 1.0),))
    return out


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(np.matmul(a.data, b.data))

    def rule(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    _TAPE.record([a, b], out, rule)
    return out


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.exp(a.data))
    _TAPE.record([a], out, lambda g: (g * out.data,))
    return out


def log(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.log(a.data))
    _TAPE.record([a], out, lambda g: (g / a.data,))
    return out


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.sqrt(a.data))
    _TAPE.record([a], out, lambda g: (g * 0.5 / out.data,))
    return out


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.tanh(a.data))
    _TAPE.record([a], out, lambda g: (g * (1.0 - out.data ** 2),))
    return out


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(1.0 / (1.0 + np.exp(-a.data)))
    _TAPE.record([a], out, lambda g: (g * out.data * (1.0 - out.data),))
    return out


def relu(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.maximum(a.data, 0.0))
    _TAPE.record([a], out, lambda g: (g * (a.data > 0.0),))
    return out


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a) -> Tensor:
    """tanh-approximation GELU."""
    a = _as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    out = Tensor(0.5 * x * (1.0 + t))

    def rule(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
        dx = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t ** 2) * dinner
        return (g * dx,)

    _TAPE.record([a], out, rule)
    return out


def clamp_min(a, lo: float) -> Tensor:
    """max(a, lo); subgradient 0 on the clamped side."""
    a = _as_tensor(a)
    out = Tensor(np.maximum(a.data, lo))
    _TAPE.record([a], out, lambda g: (g * (a.data > lo),))
    return out


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def rule(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    _TAPE.record([a], out, rule)
    return out


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    if axis is None:
        n = a.size
    elif isinstance(axis, int):
        n = a.shape[axis]
    else:
        n = int(np.prod([a.shape[ax] for ax in axis]))
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data.reshape(shape))
    _TAPE.record([a], out, lambda g: (g.reshape(a.shape),))
    return out


def transpose(a, axes) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data.transpose(axes))
    inv = np.argsort(axes)
    _TAPE.record([a], out, lambda g: (g.transpose(inv),))
    return out


def getitem(a, idx) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data[idx])

    def rule(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)

    _TAPE.record([a], out, rule)
    return out


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def rule(g):
        return tuple(np.split(g, splits, axis=axis))

    _TAPE.record(tensors, out, rule)
    return out


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = Tensor(np.stack([t.data for t in tensors], axis=axis))

    def rule(g):
        return tuple(np.moveaxis(g, axis, 0))

    _TAPE.record(tensors, out, rule)
    return out


def softmax(a, axis: int = -1) -> Tensor:
    """Numerically stable softmax along an axis."""
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(s)

    def rule(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        return (s * (g - dot),)

    _TAPE.record([a], out, rule)
    return out


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor],
               eps: float = 1e-5, max_coords: int = 100,
               rng: np.random.Generator | None = None) -> float:
    """Max relative error between analytic grads and central differences.

    ``f`` recomputes the scalar loss from the current values of ``params``;
    up to ``max_coords`` coordinates are probed per parameter.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    for p in params:
        p.zero_grad()
    loss = f()
    backward(loss)
    worst = 0.0
    for p in params:
        assert p.grad is not None, "parameter did not receive a gradient"
        flat = p.data.reshape(-1)
        gflat = p.grad.reshape(-1)
        n = flat.size
        coords = rng.choice(n, size=min(n, max_coords), replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            with no_grad():
                f_plus = f().item()
            flat[i] = orig - eps
            with no_grad():
                f_minus = f().item()
            flat[i] = orig
            num = (f_plus - f_minus) / (2.0 * eps)
            # the floor keeps finite-difference cancellation noise on
            # exactly-zero gradients from registering as relative error
            denom = max(abs(num), abs(gflat[i]), 1e-4)
            worst = max(worst, abs(num - gflat[i]) / denom)
    return worst
