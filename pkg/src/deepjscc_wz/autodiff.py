"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Only the operations the codec networks need are implemented. Every op records
a vector-Jacobian closure; ``Tensor.backward()`` walks the graph once in
reverse topological order and accumulates gradients into ``.grad``. Gradients
are checked against central finite differences in the test suite, which is
why everything stays in float64.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from . import kernels

_GRAD_ENABLED = [True]


class no_grad:
    """Context manager that disables graph construction (inference mode)."""

    def __enter__(self):
        self._prev = _GRAD_ENABLED[0]
        _GRAD_ENABLED[0] = False
        return self

    def __exit__(self, *exc):
        _GRAD_ENABLED[0] = self._prev
        return False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._vjp = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def item(self) -> float:
        return float(self.data)

    def backward(self) -> None:
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._vjp is None or node.grad is None:
                continue
            grads = node._vjp(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                parent.grad += g

    # Operator sugar used throughout the layer code.
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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _from_op(data: np.ndarray, parents: Sequence[Tensor], vjp) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED[0] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise / arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _from_op(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _from_op(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _from_op(
        a.data * b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        ),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    inv = 1.0 / b.data
    return _from_op(
        a.data * inv,
        (a, b),
        lambda g: (
            _unbroadcast(g * inv, a.data.shape),
            _unbroadcast(-g * a.data * inv * inv, b.data.shape),
        ),
    )


def square(a) -> Tensor:
    a = as_tensor(a)
    return _from_op(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    root = np.sqrt(a.data)
    return _from_op(root, (a,), lambda g: (0.5 * g / root,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return _from_op(s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)
    return _from_op(t, (a,), lambda g: (g * (1.0 - t * t),))


def silu(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    s = 1.0 / (1.0 + np.exp(-np.clip(x, -500, 500)))
    return _from_op(x * s, (a,), lambda g: (g * (s + x * s * (1.0 - s)),))


def leaky_relu(a, slope: float = 0.01) -> Tensor:
    a = as_tensor(a)
    mask = np.where(a.data >= 0, 1.0, slope)
    return _from_op(a.data * mask, (a,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# reductions / shape
# ---------------------------------------------------------------------------

def _norm_axis(axis, ndim) -> tuple:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    ax = _norm_axis(axis, a.ndim)
    data = a.data.sum(axis=ax, keepdims=keepdims)

    def vjp(g):
        gg = g if keepdims else np.expand_dims(g, ax)
        return (np.broadcast_to(gg, a.data.shape).copy(),)

    return _from_op(data, (a,), vjp)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    ax = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.data.shape[i] for i in ax]))
    data = a.data.mean(axis=ax, keepdims=keepdims)

    def vjp(g):
        gg = g if keepdims else np.expand_dims(g, ax)
        return (np.broadcast_to(gg, a.data.shape) / count,)

    return _from_op(data, (a,), vjp)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    orig = a.data.shape
    return _from_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(orig),))


def concat(tensors: Iterable, axis: int = 1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = np.cumsum([t.data.shape[axis] for t in ts])[:-1]

    def vjp(g):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, sizes, axis=axis))

    return _from_op(data, tuple(ts), vjp)


# ---------------------------------------------------------------------------
# linear algebra / convolution / resampling
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _from_op(
        a.data @ b.data,
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
    )


def conv2d(x, w, b=None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of ``x (n,cin,h,w)`` with ``w (cout,cin,k,k)``."""
    x, w = as_tensor(x), as_tensor(w)
    n, cin, h, wd = x.data.shape
    cout, cin2, k, k2 = w.data.shape
    if cin != cin2 or k != k2:
        raise ValueError(f"conv2d shape mismatch: x {x.data.shape} vs w {w.data.shape}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols = kernels.im2col(xp, k, stride)                  # (n, cin*k*k, L)
    w2 = w.data.reshape(cout, -1)
    y = np.matmul(w2, cols)                               # (n, cout, L)
    oh = kernels.conv_out_size(h, k, stride, pad)
    ow = kernels.conv_out_size(wd, k, stride, pad)
    y = y.reshape(n, cout, oh, ow)
    if b is not None:
        b = as_tensor(b)
        y = y + b.data.reshape(1, cout, 1, 1)

    xp_shape = xp.shape

    def vjp(g):
        g2 = np.ascontiguousarray(g.reshape(n, cout, -1))
        dw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.data.shape)
        dcols = np.matmul(w2.T, g2)
        dxp = kernels.col2im(dcols, xp_shape, k, stride)
        dx = dxp[:, :, pad:pad + h, pad:pad + wd] if pad else dxp
        if b is not None:
            return dx, dw, g.sum(axis=(0, 2, 3))
        return dx, dw

    parents = (x, w) if b is None else (x, w, b)
    return _from_op(y, parents, vjp)


def upsample2(x) -> Tensor:
    """Nearest-neighbour 2x upsampling along the two trailing axes."""
    x = as_tensor(x)
    y = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def vjp(g):
        n, c, h2, w2 = g.shape
        return (g.reshape(n, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5)),)

    return _from_op(y, (x,), vjp)
