"""Reverse-mode automatic differentiation over numpy arrays.

A `Tensor` wraps an ndarray and remembers how it was produced; calling
`backward()` on a scalar walks the graph in reverse topological order and
accumulates vector-Jacobian products into `.grad`. All arithmetic follows
numpy broadcasting; gradients of broadcast operands are summed back to the
operand's shape. Python scalars are absorbed at the dtype of the tensor
they combine with, so float32 graphs stay float32.
"""

from __future__ import annotations

import numpy as np
from scipy import special as _special


class Tensor:
    __slots__ = ("data", "grad", "_parents", "_vjp")

    def __init__(self, data, parents=(), vjp=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad = None
        self._parents = parents
        self._vjp = vjp

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"

    def item(self) -> float:
        return float(self.data)

    # -- graph traversal -----------------------------------------------------

    def backward(self, grad=None):
        """Accumulate d(self)/d(node) into `.grad` for every upstream node."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar")
            grad = np.ones_like(self.data)
        order = self._topo_order()
        self.grad = np.asarray(grad)
        for node in order:
            if node._vjp is None:
                continue
            gs = node._vjp(node.grad)
            for parent, g in zip(node._parents, gs):
                if g is None:
                    continue
                if parent.grad is None:
                    parent.grad = g
                else:
                    parent.grad = parent.grad + g

    def _topo_order(self):
        """Reverse topological order, iterative (graphs can be 1000s deep)."""
        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        order.reverse()
        return order

    # -- operators -------------------------------------------------------

    def __add__(self, other):
        other = _wrap(other, self.dtype)
        out = Tensor(
            self.data + other.data,
            (self, other),
            lambda g: (_unbroadcast(g, self.shape), _unbroadcast(g, other.shape)),
        )
        return out

    __radd__ = __add__

    def __sub__(self, other):
        other = _wrap(other, self.dtype)
        return Tensor(
            self.data - other.data,
            (self, other),
            lambda g: (_unbroadcast(g, self.shape), _unbroadcast(-g, other.shape)),
        )

    def __rsub__(self, other):
        return _wrap(other, self.dtype) - self

    def __mul__(self, other):
        other = _wrap(other, self.dtype)
        return Tensor(
            self.data * other.data,
            (self, other),
            lambda g: (
                _unbroadcast(g * other.data, self.shape),
                _unbroadcast(g * self.data, other.shape),
            ),
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _wrap(other, self.dtype)
        return Tensor(
            self.data / other.data,
            (self, other),
            lambda g: (
                _unbroadcast(g / other.data, self.shape),
                _unbroadcast(-g * self.data / (other.data * other.data), other.shape),
            ),
        )

    def __rtruediv__(self, other):
        return _wrap(other, self.dtype) / self

    def __neg__(self):
        return Tensor(-self.data, (self,), lambda g: (-g,))

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise TypeError("only scalar exponents are supported")
        return Tensor(
            self.data**p,
            (self,),
            lambda g: (g * p * self.data ** (p - 1),),
        )

    def __matmul__(self, other):
        if not isinstance(other, Tensor):
            other = Tensor(other)
        a, b = self.data, other.data
        if a.ndim < 2 or b.ndim < 2:
            raise ValueError("matmul requires operands of rank >= 2")

        def vjp(g):
            ga = g @ np.swapaxes(b, -1, -2)
            gb = np.swapaxes(a, -1, -2) @ g
            return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

        return Tensor(a @ b, (self, other), vjp)

    def __getitem__(self, key):
        data = self.data[key]

        def vjp(g):
            gx = np.zeros_like(self.data)
            gx[key] = g
            return (gx,)

        return Tensor(data, (self,), vjp)

    # -- shape ops ---------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return Tensor(
            self.data.reshape(shape), (self,), lambda g: (g.reshape(old),)
        )

    def transpose(self, axes):
        inv = np.argsort(axes)
        return Tensor(
            self.data.transpose(axes), (self,), lambda g: (g.transpose(inv),)
        )

    def swapaxes(self, a, b):
        return Tensor(
            np.swapaxes(self.data, a, b), (self,), lambda g: (np.swapaxes(g, a, b),)
        )

    # -- reductions ---------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out = self.data.sum(axis=axis, keepdims=keepdims)

        def vjp(g):
            if axis is None:
                return (np.broadcast_to(g, self.shape).copy(),)
            if not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, self.shape).copy(),)

        return Tensor(out, (self,), vjp)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else _axis_size(self.shape, axis)
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- pointwise functions --------------------------------------------------

    def exp(self):
        out = np.exp(self.data)
        return Tensor(out, (self,), lambda g: (g * out,))

    def log(self):
        return Tensor(np.log(self.data), (self,), lambda g: (g / self.data,))

    def sqrt(self):
        out = np.sqrt(self.data)
        return Tensor(out, (self,), lambda g: (g * 0.5 / out,))

    def tanh(self):
        out = np.tanh(self.data)
        return Tensor(out, (self,), lambda g: (g * (1.0 - out * out),))


def _wrap(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _axis_size(shape, axis) -> int:
    if isinstance(axis, int):
        axis = (axis,)
    n = 1
    for a in axis:
        n *= shape[a]
    return n


def _unbroadcast(g, shape):
    """Sum a broadcast gradient back down to `shape`."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def constant(data, dtype=None) -> Tensor:
    """A leaf tensor for inputs and fixed tables."""
    return Tensor(np.asarray(data, dtype=dtype))


def sigmoid(x: Tensor) -> Tensor:
    out = _special.expit(x.data)
    return Tensor(out, (x,), lambda g: (g * out * (1.0 - out),))


def erf(x: Tensor) -> Tensor:
    c = np.asarray(2.0 / np.sqrt(np.pi), dtype=x.dtype)
    return Tensor(
        _special.erf(x.data),
        (x,),
        lambda g: (g * c * np.exp(-x.data * x.data),),
    )


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) Gaussian error linear unit."""
    inv_sqrt2 = np.asarray(1.0 / np.sqrt(2.0), dtype=x.dtype)
    return x * (erf(x * inv_sqrt2) + 1.0) * 0.5


def silu(x: Tensor) -> Tensor:
    return x * sigmoid(x)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def softmax(x: Tensor, axis=-1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return Tensor(out, (x,), vjp)


def log_softmax(x: Tensor, axis=-1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def vjp(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return Tensor(out, (x,), vjp)


def logsumexp(x: Tensor, axis=-1, keepdims=False) -> Tensor:
    m = x.data.max(axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out = np.log(s) + m
    if not keepdims:
        out = np.squeeze(out, axis=axis)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * (e / s),)

    return Tensor(out, (x,), vjp)


def concatenate(tensors, axis=0) -> Tensor:
    datas = [t.data for t in tensors]
    sizes = [d.shape[axis] for d in datas]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor(np.concatenate(datas, axis=axis), tuple(tensors), vjp)


def take(x: Tensor, indices, axis=0) -> Tensor:
    """Gather along one axis with an integer index array of any shape."""
    indices = np.asarray(indices)

    def vjp(g):
        gx = np.zeros_like(x.data)
        if axis == 0:
            np.add.at(gx, indices, g)
        else:
            gm = np.moveaxis(gx, axis, 0)
            # moveaxis of g: indexed block occupies `indices.ndim` axes at `axis`
            gg = np.moveaxis(g, tuple(range(axis, axis + indices.ndim)),
                             tuple(range(indices.ndim)))
            np.add.at(gm, indices, gg)
        return (gx,)

    return Tensor(np.take(x.data, indices, axis=axis), (x,), vjp)


def take_along_axis(x: Tensor, indices, axis=-1) -> Tensor:
    """np.take_along_axis with accumulation on the backward pass."""
    indices = np.asarray(indices)

    def vjp(g):
        gx = np.zeros_like(x.data)
        mesh = list(np.indices(indices.shape, sparse=False))
        mesh[axis] = indices
        np.add.at(gx, tuple(mesh), g)
        return (gx,)

    return Tensor(np.take_along_axis(x.data, indices, axis=axis), (x,), vjp)


def put_rows(base: Tensor, indices, rows: Tensor) -> Tensor:
    """Copy of `base` with `base[indices] = rows` (indices distinct, axis 0)."""
    indices = np.asarray(indices)

    def vjp(g):
        g_base = g.copy()
        g_base[indices] = 0.0
        return g_base, g[indices]

    out = base.data.copy()
    out[indices] = rows.data
    return Tensor(out, (base, rows), vjp)


def where_mask(mask, x: Tensor, y: Tensor) -> Tensor:
    """Select from two tensors by a constant boolean mask."""
    mask = np.asarray(mask, dtype=bool)
    return Tensor(
        np.where(mask, x.data, y.data),
        (x, y),
        lambda g: (
            _unbroadcast(np.where(mask, g, 0.0), x.shape),
            _unbroadcast(np.where(mask, 0.0, g), y.shape),
        ),
    )
