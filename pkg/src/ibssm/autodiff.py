"""Reverse-mode automatic differentiation over numpy arrays.

A small tape-style engine: every operation returns a `Var` that records its
parents and the vector-Jacobian product (vjp) of the op with respect to each
parent. `backward(loss)` replays the reachable subgraph in reverse creation
order and accumulates gradients into `Var.grad`.

All values are float64. Broadcasting follows numpy semantics; gradients are
summed back down to the parent shape.
"""

import itertools

import numpy as np

_ORDER = itertools.count()


class Var:
    """An array node in the differentiation graph."""

    __slots__ = ("value", "grad", "_parents", "_vjps", "_order")

    def __init__(self, value, parents=(), vjps=()):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._vjps = vjps
        self._order = next(_ORDER)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def item(self):
        return float(self.value)

    # -- operator sugar ----------------------------------------------------

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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, index):
        return getitem(self, index)

    def __repr__(self):
        return f"Var(shape={self.value.shape}, order={self._order})"


def as_var(x):
    """Promote a constant (ndarray or scalar) to a leaf Var."""
    return x if isinstance(x, Var) else Var(x)


def _unbroadcast(grad, shape):
    """Reverse numpy broadcasting: reduce `grad` down to `shape`."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- elementwise arithmetic ------------------------------------------------


def add(a, b):
    a, b = as_var(a), as_var(b)
    return Var(
        a.value + b.value,
        (a, b),
        (
            lambda g: _unbroadcast(g, a.value.shape),
            lambda g: _unbroadcast(g, b.value.shape),
        ),
    )


def sub(a, b):
    a, b = as_var(a), as_var(b)
    return Var(
        a.value - b.value,
        (a, b),
        (
            lambda g: _unbroadcast(g, a.value.shape),
            lambda g: _unbroadcast(-g, b.value.shape),
        ),
    )


def mul(a, b):
    a, b = as_var(a), as_var(b)
    return Var(
        a.value * b.value,
        (a, b),
        (
            lambda g: _unbroadcast(g * b.value, a.value.shape),
            lambda g: _unbroadcast(g * a.value, b.value.shape),
        ),
    )


def div(a, b):
    a, b = as_var(a), as_var(b)
    return Var(
        a.value / b.value,
        (a, b),
        (
            lambda g: _unbroadcast(g / b.value, a.value.shape),
            lambda g: _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape),
        ),
    )


def power(a, exponent):
    a = as_var(a)
    p = float(exponent)
    return Var(
        a.value**p,
        (a,),
        (lambda g: g * p * a.value ** (p - 1.0),),
    )


# -- transcendental --------------------------------------------------------


def exp(a):
    a = as_var(a)
    out = np.exp(a.value)
    return Var(out, (a,), (lambda g: g * out,))


def log(a):
    a = as_var(a)
    return Var(np.log(a.value), (a,), (lambda g: g / a.value,))


def expm1(a):
    a = as_var(a)
    out = np.expm1(a.value)
    return Var(out, (a,), (lambda g: g * (out + 1.0),))


def tanh(a):
    a = as_var(a)
    out = np.tanh(a.value)
    return Var(out, (a,), (lambda g: g * (1.0 - out * out),))


def softplus(a):
    """log(1 + exp(x)), overflow-safe; derivative is the logistic sigmoid."""
    a = as_var(a)
    x = a.value
    out = np.where(x > 30.0, x, np.log1p(np.exp(np.minimum(x, 30.0))))
    sig = 1.0 / (1.0 + np.exp(-np.clip(x, -500.0, 500.0)))
    return Var(out, (a,), (lambda g: g * sig,))


def clip(a, lo, hi):
    """Clamp; gradient passes only strictly inside the interval."""
    a = as_var(a)
    mask = (a.value > lo) & (a.value < hi)
    return Var(np.clip(a.value, lo, hi), (a,), (lambda g: g * mask,))


# -- linear algebra / structure --------------------------------------------


def matmul(a, b):
    a, b = as_var(a), as_var(b)
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise ValueError("matmul supports 2-D operands only")
    return Var(
        a.value @ b.value,
        (a, b),
        (
            lambda g: g @ b.value.T,
            lambda g: a.value.T @ g,
        ),
    )


def transpose(a):
    a = as_var(a)
    if a.value.ndim != 2:
        raise ValueError("transpose supports 2-D operands only")
    return Var(a.value.T, (a,), (lambda g: g.T,))


def reshape(a, shape):
    a = as_var(a)
    return Var(
        a.value.reshape(shape),
        (a,),
        (lambda g: g.reshape(a.value.shape),),
    )


def _is_basic_index(index):
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (int, np.integer, slice, type(Ellipsis), type(None))) for p in parts)


class _ScatterVjp:
    """Slice-gradient vjp that backward() applies in place, so the many slices
    of one tensor share a single accumulation buffer."""

    __slots__ = ("index", "basic")

    def __init__(self, index):
        self.index = index
        self.basic = _is_basic_index(index)

    def add_into(self, buf, g):
        if self.basic:
            buf[self.index] += g  # basic slicing never hits a cell twice
        else:
            np.add.at(buf, self.index, g)


def getitem(a, index):
    a = as_var(a)
    return Var(a.value[index], (a,), (_ScatterVjp(index),))


def stack(vars_, axis=0):
    vars_ = [as_var(v) for v in vars_]
    value = np.stack([v.value for v in vars_], axis=axis)
    vjps = tuple(
        (lambda i: lambda g: np.take(g, i, axis=axis))(i) for i in range(len(vars_))
    )
    return Var(value, tuple(vars_), vjps)


def vsum(a, axis=None, keepdims=False):
    a = as_var(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, a.value.shape).copy()
        if not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, a.value.shape).copy()

    return Var(out, (a,), (vjp,))


def vmean(a, axis=None, keepdims=False):
    a = as_var(a)
    if axis is None:
        n = a.value.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = 1
        for ax in axes:
            n *= a.value.shape[ax]
    return mul(vsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# -- backward pass ----------------------------------------------------------


def backward(root):
    """Accumulate d(root)/d(leaf) into `.grad` of every reachable Var.

    `root` must be scalar-valued (size 1).
    """
    if root.value.size != 1:
        raise ValueError("backward requires a scalar root")

    reachable = []
    seen = set()
    stack_ = [root]
    while stack_:
        node = stack_.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        reachable.append(node)
        stack_.extend(node._parents)

    reachable.sort(key=lambda v: v._order, reverse=True)
    root.grad = np.ones_like(root.value)
    # grads may arrive as views of downstream buffers; accumulate in place only
    # into buffers this pass allocated itself (after the first functional add)
    owned = set()
    for node in reachable:
        if node.grad is None:
            continue
        for parent, vjp in zip(node._parents, node._vjps):
            if isinstance(vjp, _ScatterVjp):
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.value)
                    owned.add(id(parent))
                elif id(parent) not in owned:
                    parent.grad = parent.grad.copy()
                    owned.add(id(parent))
                vjp.add_into(parent.grad, node.grad)
                continue
            g = vjp(node.grad)
            if parent.grad is None:
                parent.grad = g
            elif id(parent) in owned:
                parent.grad += g
            else:
                parent.grad = parent.grad + g
                owned.add(id(parent))
