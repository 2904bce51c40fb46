"""Small reverse-mode differentiation tape over numpy arrays.

Only the operations the losses in this package need are provided. Every
``Var`` records its parents and a closure that pushes its gradient back to
them; ``Var.backward`` walks the graph in reverse topological order.
"""
from __future__ import annotations

import numpy as np


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Var:
    __slots__ = ("value", "grad", "_parents", "_backward")

    def __init__(self, value, parents=(), backward=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._backward = backward

    # -- plumbing ---------------------------------------------------------
    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __len__(self):
        return len(self.value)

    def __float__(self):
        return float(self.value)

    def __repr__(self):
        return f"Var({self.value!r})"

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad = self.grad + g

    def backward(self, seed=None):
        order, seen = [], set()

        def visit(node):
            stack = [(node, False)]
            while stack:
                cur, done = stack.pop()
                if done:
                    order.append(cur)
                    continue
                if id(cur) in seen:
                    continue
                seen.add(id(cur))
                stack.append((cur, True))
                for p in cur._parents:
                    if id(p) not in seen:
                        stack.append((p, False))

        visit(self)
        self.grad = np.ones_like(self.value) if seed is None else np.asarray(seed, dtype=np.float64)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic -------------------------------------------------------
    def __add__(self, other):
        other = as_var(other)
        out = Var(self.value + other.value, (self, other))

        def backward(g):
            self._accumulate(_unbroadcast(g, self.shape))
            other._accumulate(_unbroadcast(g, other.shape))

        out._backward = backward
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Var(-self.value, (self,))
        out._backward = lambda g: self._accumulate(-g)
        return out

    def __sub__(self, other):
        return self + (-as_var(other))

    def __rsub__(self, other):
        return as_var(other) + (-self)

    def __mul__(self, other):
        other = as_var(other)
        out = Var(self.value * other.value, (self, other))

        def backward(g):
            self._accumulate(_unbroadcast(g * other.value, self.shape))
            other._accumulate(_unbroadcast(g * self.value, other.shape))

        out._backward = backward
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_var(other)
        out = Var(self.value / other.value, (self, other))

        def backward(g):
            self._accumulate(_unbroadcast(g / other.value, self.shape))
            other._accumulate(_unbroadcast(-g * self.value / other.value**2, other.shape))

        out._backward = backward
        return out

    def __rtruediv__(self, other):
        return as_var(other) / self

    def __pow__(self, k):
        k = float(k)
        out = Var(self.value**k, (self,))
        out._backward = lambda g: self._accumulate(g * k * self.value ** (k - 1))
        return out

    def __matmul__(self, other):
        other = as_var(other)
        out = Var(self.value @ other.value, (self, other))

        def backward(g):
            self._accumulate(g @ other.value.T)
            other._accumulate(self.value.T @ g)

        out._backward = backward
        return out

    def __getitem__(self, idx):
        out = Var(self.value[idx], (self,))

        basic = isinstance(idx, (slice, int)) or (
            isinstance(idx, tuple) and all(isinstance(i, (slice, int)) or i is None for i in idx)
        )

        def backward(g):
            full = np.zeros_like(self.value)
            if basic:
                full[idx] += g
            else:
                np.add.at(full, idx, g)
            self._accumulate(full)

        out._backward = backward
        return out

    # -- reductions and reshapes -----------------------------------------
    def sum(self, axis=None):
        out = Var(self.value.sum(axis=axis), (self,))

        def backward(g):
            if axis is not None:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, self.shape))

        out._backward = backward
        return out

    def mean(self, axis=None):
        count = self.value.size if axis is None else self.value.shape[axis]
        return self.sum(axis) / count

    def reshape(self, *shape):
        out = Var(self.value.reshape(*shape), (self,))
        out._backward = lambda g: self._accumulate(g.reshape(self.shape))
        return out

    def abs(self):
        out = Var(np.abs(self.value), (self,))
        out._backward = lambda g: self._accumulate(g * np.sign(self.value))
        return out

    def detach(self):
        return Var(self.value)


def as_var(x):
    return x if isinstance(x, Var) else Var(x)


def value_of(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def concat(parts, axis=-1):
    parts = [as_var(p) for p in parts]
    out = Var(np.concatenate([p.value for p in parts], axis=axis), tuple(parts))
    sizes = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def backward(g):
        for p, piece in zip(parts, np.split(g, sizes, axis=axis)):
            p._accumulate(piece)

    out._backward = backward
    return out


def exp(x):
    x = as_var(x)
    out = Var(np.exp(x.value), (x,))
    out._backward = lambda g: x._accumulate(g * out.value)
    return out


def tanh(x):
    x = as_var(x)
    out = Var(np.tanh(x.value), (x,))
    out._backward = lambda g: x._accumulate(g * (1.0 - out.value**2))
    return out


def relu(x):
    x = as_var(x)
    out = Var(np.maximum(x.value, 0.0), (x,))
    out._backward = lambda g: x._accumulate(g * (x.value > 0.0))
    return out


def norm(x, axis=-1):
    """Euclidean norm along ``axis``; the subgradient at zero is taken as 0."""
    x = as_var(x)
    n = np.sqrt((x.value**2).sum(axis=axis))
    out = Var(n, (x,))

    def backward(g):
        safe = np.where(n > 0.0, n, 1.0)
        scale = np.where(n > 0.0, g / safe, 0.0)
        x._accumulate(np.expand_dims(scale, axis) * x.value)

    out._backward = backward
    return out


def pairwise_sqdist(x, y):
    """Matrix of squared distances ``D[i, j] = ||x_i - y_j||^2`` for 2-D inputs."""
    x, y = as_var(x), as_var(y)
    xv, yv = x.value, y.value
    d2 = (xv**2).sum(axis=1)[:, None] + (yv**2).sum(axis=1)[None, :] - 2.0 * (xv @ yv.T)
    out = Var(np.maximum(d2, 0.0), (x, y))

    def backward(g):
        x._accumulate(2.0 * (g.sum(axis=1)[:, None] * xv - g @ yv))
        y._accumulate(2.0 * (g.sum(axis=0)[:, None] * yv - g.T @ xv))

    out._backward = backward
    return out
