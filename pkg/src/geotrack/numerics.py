"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every differentiable op appends a node to the current thread's ``Tape`` when
any of its inputs requires a gradient.  ``backward(loss)`` walks the tape in
reverse exactly once and then clears it; a second ``backward`` on a tensor
recorded before the clear raises ``ContractError``.

Broadcasting follows numpy's trailing-dimension rule with size-1 expansion.
"""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

from .errors import ContractError, DimensionError

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Tensor:
    """A float64 array that may participate in gradient recording.

    ``data`` is treated as immutable once created; the optimizer replaces it
    with a fresh array instead of writing in place.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_node")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._node = None

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool = False) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr if arr.dtype == np.float64 else arr.astype(np.float64)
        t.requires_grad = requires_grad
        t.grad = None
        t.name = None
        t._node = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self)

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

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

    def __getitem__(self, index):
        return take(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def _raise_item(t):
    raise DimensionError(f"item() needs a single-element tensor, got shape {t.shape}")


@dataclass
class Node:
    op: str
    inputs: tuple
    output: Tensor
    backward: Callable[[np.ndarray], Sequence]


@dataclass
class Tape:
    """Ordered record of executed ops; inputs of a node always precede it."""

    nodes: list = field(default_factory=list)
    generation: int = 0

    def record(self, node: Node) -> None:
        node.output._node = (self, self.generation, len(self.nodes))
        self.nodes.append(node)

    def clear(self) -> None:
        self.nodes = []
        self.generation += 1

    def __len__(self) -> int:
        return len(self.nodes)


_local = threading.local()


def _state():
    if not hasattr(_local, "tape"):
        _local.tape = Tape()
        _local.enabled = True
    return _local


def current_tape() -> Tape:
    return _state().tape


@contextlib.contextmanager
def use_tape(tape: Tape):
    st = _state()
    prev = st.tape
    st.tape = tape
    try:
        yield tape
    finally:
        st.tape = prev


@contextlib.contextmanager
def no_grad():
    st = _state()
    prev = st.enabled
    st.enabled = False
    try:
        yield
    finally:
        st.enabled = prev


def grad_enabled() -> bool:
    return _state().enabled


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor._wrap(np.asarray(x, dtype=np.float64))


def _result(data: np.ndarray, inputs: tuple, backward, op: str) -> Tensor:
    st = _state()
    track = st.enabled and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(data, requires_grad=track)
    if track:
        st.tape.record(Node(op, inputs, out, backward))
    return out


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every leaf that requires a gradient.

    Leaves that appear on the tape but are not on a path to ``loss`` get a
    zero gradient.  Gradients accumulate into existing ``.grad`` arrays.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._node is None:
        if loss.requires_grad:
            loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0
            return
        raise ContractError("loss was not recorded on any tape")
    tape, generation, pos = loss._node
    if generation != tape.generation:
        raise ContractError("tape already consumed by an earlier backward; double backward is unsupported")

    nodes = tape.nodes[: pos + 1]
    for node in nodes:
        for inp in node.inputs:
            if inp.requires_grad and inp._node is None and inp.grad is None:
                inp.grad = np.zeros_like(inp.data)

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for inp, ig in zip(node.inputs, node.backward(g)):
            if ig is None or not inp.requires_grad:
                continue
            if inp._node is None:
                inp.grad = inp.grad + ig
            else:
                key = id(inp)
                prev = grads.get(key)
                grads[key] = ig if prev is None else prev + ig
    tape.clear()


# ---------------------------------------------------------------- helpers


def _broadcast_shape(a: tuple, b: tuple, op: str) -> tuple:
    try:
        return np.broadcast_shapes(a, b)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast shapes {a} and {b}") from None


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ------------------------------------------------------------ elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "add")
    sa, sb = a.shape, b.shape
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "sub")
    sa, sb = a.shape, b.shape
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "mul")
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b),
                   lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)), "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "div")
    ad, bd = a.data, b.data
    out = ad / bd

    def bwd(g):
        return _unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)

    return _result(out, (a, b), bwd, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,), "exp")


def relu(a) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    return _result(np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,), "relu")


def gelu(a) -> Tensor:
    """Exact GeLU, x * Phi(x)."""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))

    def bwd(g):
        return (g * (cdf + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)),)

    return _result(x * cdf, (a,), bwd, "gelu")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


# -------------------------------------------------------------- reductions


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _result(np.asarray(out, dtype=np.float64), (a,), bwd, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([a.shape[i] for i in axes]))
    return tsum(a, axis, keepdims) * (1.0 / n)


def tmax(a, axis: int) -> Tensor:
    """Max along ``axis``; the subgradient goes to the first argmax."""
    a = as_tensor(a)
    idx = np.expand_dims(np.argmax(a.data, axis=axis), axis)
    out = np.take_along_axis(a.data, idx, axis=axis)
    shape = a.shape

    def bwd(g):
        full = np.zeros(shape)
        np.put_along_axis(full, idx, np.expand_dims(g, axis), axis=axis)
        return (full,)

    return _result(np.squeeze(out, axis=axis), (a,), bwd, "max")


# --------------------------------------------------------------- structure


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {old} as {tuple(shape)}") from None
    return _result(out, (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return _result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def swap_last(a) -> Tensor:
    a = as_tensor(a)
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, tuple(axes))


def take(a, index) -> Tensor:
    """numpy-style indexing; repeated integer indices accumulate gradient."""
    a = as_tensor(a)
    shape = a.shape

    def bwd(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return _result(np.array(a.data[index]), (a,), bwd, "take")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise DimensionError(f"concat: incompatible shapes {[t.shape for t in ts]}") from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _result(out, ts, lambda g: tuple(np.split(g, bounds, axis=axis)), "concat")


# ------------------------------------------------------------------ linear


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    _broadcast_shape(a.shape[:-2], b.shape[:-2], "matmul")
    ad, bd = a.data, b.data

    def bwd(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return _result(ad @ bd, (a, b), bwd, "matmul")


# --------------------------------------------------------------- normalize


def softmax_lastdim(x) -> Tensor:
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[-1] == 0:
        raise DimensionError(f"softmax: empty last dimension in shape {x.shape}")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _result(out, (x,), bwd, "softmax")


def topk_indices(logits: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest entries per row; ties go to the lower index."""
    order = np.argsort(-logits, axis=-1, kind="stable")
    return np.sort(order[..., :k], axis=-1)


def topk_softmax(x, k: int) -> Tensor:
    """Softmax over the k largest entries of each row; the rest are exactly 0."""
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[-1] == 0:
        raise DimensionError(f"topk_softmax: empty last dimension in shape {x.shape}")
    m = x.shape[-1]
    if not 1 <= k <= m:
        raise DimensionError(f"topk_softmax: k={k} outside [1, {m}]")
    keep = np.zeros(x.shape, dtype=bool)
    np.put_along_axis(keep, topk_indices(x.data, k), True, axis=-1)
    z = np.where(keep, x.data, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.where(keep, np.exp(z), 0.0)
    out = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _result(out, (x,), bwd, "topk_softmax")


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    if x.ndim == 0 or x.shape[-1] == 0:
        raise DimensionError(f"layer_norm: empty feature dimension in shape {x.shape}")
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise DimensionError(f"layer_norm: affine shapes {gain.shape}, {bias.shape} vs input {x.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gain.data

    def bwd(g):
        dxhat = g * gd
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _result(xhat * gd + bias.data, (x, gain, bias), bwd, "layer_norm")


# ------------------------------------------------------------------ losses


def bce_with_logits(logits, labels) -> Tensor:
    """Elementwise binary cross-entropy on raw logits; labels are constants."""
    logits = as_tensor(logits)
    y = np.asarray(labels.data if isinstance(labels, Tensor) else labels, dtype=np.float64)
    if y.shape != logits.shape:
        raise DimensionError(f"bce: logits {logits.shape} vs labels {y.shape}")
    x = logits.data
    out = np.maximum(x, 0.0) - x * y + np.log1p(np.exp(-np.abs(x)))
    return _result(out, (logits,), lambda g: (g * (_sigmoid(x) - y),), "bce")


def huber(pred, target, delta: float = 1.0) -> Tensor:
    """Elementwise Huber penalty on ``pred - target``; ``target`` is constant."""
    pred = as_tensor(pred)
    t = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    r = pred.data - t
    a = np.abs(r)
    quad = a <= delta
    out = np.where(quad, 0.5 * r * r, delta * (a - 0.5 * delta))
    return _result(out, (pred,), lambda g: (g * np.where(quad, r, delta * np.sign(r)),), "huber")
