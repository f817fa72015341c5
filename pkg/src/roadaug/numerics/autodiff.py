"""Reverse-mode differentiation over dense float64 arrays.

Every operation builds a node holding its forward value, its parents, the
forward function (for tape replay) and a vector-Jacobian product written in
terms of other ``Tensor`` operations. Because the backward pass is made of
ordinary nodes, ``grad(..., create_graph=True)`` returns gradients that can
themselves be differentiated, which is what the gradient penalty needs.
"""
from __future__ import annotations

import numpy as np

from ..errors import ContractError, NumericalError


class Tensor:
    __slots__ = ("value", "parents", "op", "requires_grad", "_fwd", "_vjp", "__weakref__")

    # numpy must defer to our reflected operators (ndarray * Tensor)
    __array_priority__ = 1000

    def __init__(self, value, requires_grad=False):
        self.value = np.array(value, dtype=np.float64)
        self.parents = ()
        self.op = "leaf"
        self.requires_grad = bool(requires_grad)
        self._fwd = None
        self._vjp = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def size(self):
        return self.value.size

    @property
    def T(self):
        return transpose(self)

    def item(self):
        return float(self.value.reshape(-1)[0]) if self.value.size == 1 else self.value

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape}, requires_grad={self.requires_grad})"

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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def detach(x):
    return Tensor(as_tensor(x).value)


def _make(op, parents, fwd, vjp):
    parents = tuple(as_tensor(p) for p in parents)
    with np.errstate(all="ignore"):
        value = np.asarray(fwd(*[p.value for p in parents]), dtype=np.float64)
    if not np.all(np.isfinite(value)):
        raise NumericalError(f"non-finite value produced by node '{op}' (shape {value.shape})")
    out = Tensor.__new__(Tensor)
    out.value = value
    out.parents = parents
    out.op = op
    out.requires_grad = any(p.requires_grad for p in parents)
    out._fwd = fwd
    out._vjp = vjp
    return out


# --- primitives -----------------------------------------------------------

def add(a, b):
    return _make("add", (a, b), np.add,
                 lambda g, ins, out: (sum_to(g, ins[0].shape), sum_to(g, ins[1].shape)))


def sub(a, b):
    return _make("sub", (a, b), np.subtract,
                 lambda g, ins, out: (sum_to(g, ins[0].shape), sum_to(neg(g), ins[1].shape)))


def neg(a):
    return _make("neg", (a,), np.negative, lambda g, ins, out: (neg(g),))


def mul(a, b):
    def vjp(g, ins, out):
        a, b = ins
        return sum_to(mul(g, b), a.shape), sum_to(mul(g, a), b.shape)
    return _make("mul", (a, b), np.multiply, vjp)


def div(a, b):
    def vjp(g, ins, out):
        a, b = ins
        ga = div(g, b)
        gb = neg(div(mul(ga, a), b))
        return sum_to(ga, a.shape), sum_to(gb, b.shape)
    return _make("div", (a, b), np.divide, vjp)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ContractError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ContractError(f"matmul shape mismatch {a.shape} @ {b.shape}")

    def vjp(g, ins, out):
        a, b = ins
        return matmul(g, transpose(b)), matmul(transpose(a), g)
    return _make("matmul", (a, b), np.matmul, vjp)


def transpose(a):
    return _make("transpose", (a,), np.transpose, lambda g, ins, out: (transpose(g),))


def reshape(a, shape):
    a = as_tensor(a)
    src = a.shape
    return _make("reshape", (a,), lambda v: np.reshape(v, shape),
                 lambda g, ins, out: (reshape(g, src),))


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    src = a.shape
    if axis is None:
        kshape = (1,) * len(src)
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(ax % len(src) for ax in axes)
        kshape = tuple(1 if i in axes else n for i, n in enumerate(src))

    def vjp(g, ins, out):
        return (broadcast_to(reshape(g, kshape), src),)
    return _make("sum", (a,), lambda v: np.sum(v, axis=axis, keepdims=keepdims), vjp)


def broadcast_to(a, shape):
    a = as_tensor(a)
    shape = tuple(shape)
    if a.shape == shape:
        return a
    src = a.shape
    return _make("broadcast", (a,), lambda v: np.broadcast_to(v, shape).copy(),
                 lambda g, ins, out: (sum_to(g, src),))


def sum_to(a, shape):
    """Reduce a broadcast result back to ``shape`` (adjoint of broadcasting)."""
    a = as_tensor(a)
    shape = tuple(shape)
    if a.shape == shape:
        return a
    lead = a.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        lead + i for i, n in enumerate(shape) if n == 1 and a.shape[lead + i] != 1)

    def fwd(v):
        return np.sum(v, axis=axes, keepdims=True).reshape(shape)
    src = a.shape
    return _make("sum_to", (a,), fwd, lambda g, ins, out: (broadcast_to(g, src),))


def square(a):
    return _make("square", (a,), np.square,
                 lambda g, ins, out: (mul(g, mul(ins[0], 2.0)),))


def sqrt(a):
    def vjp(g, ins, out):
        # d sqrt at 0 is taken as 0; the mask is a constant so higher orders stay valid
        zero = (out.value == 0.0).astype(np.float64)
        return (mul(g, mul(div(0.5, add(out, zero)), 1.0 - zero)),)
    return _make("sqrt", (a,), np.sqrt, vjp)


def leaky_relu(a, slope=0.2):
    def vjp(g, ins, out):
        return (mul(g, np.where(ins[0].value > 0, 1.0, slope)),)
    return _make("leaky_relu", (a,), lambda v: np.where(v > 0, v, slope * v), vjp)


def relu(a):
    def vjp(g, ins, out):
        return (mul(g, (ins[0].value > 0).astype(np.float64)),)
    return _make("relu", (a,), lambda v: np.maximum(v, 0.0), vjp)


def tanh(a):
    return _make("tanh", (a,), np.tanh,
                 lambda g, ins, out: (mul(g, sub(1.0, square(out))),))


def sigmoid(a):
    return _make("sigmoid", (a,), lambda v: 0.5 * (1.0 + np.tanh(0.5 * v)),
                 lambda g, ins, out: (mul(g, mul(out, sub(1.0, out))),))


def identity(a):
    return as_tensor(a)


# --- composites -----------------------------------------------------------

def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return div(tsum(a, axis, keepdims), float(count))


def norm(a, axis=None):
    """Euclidean norm, optionally per slice along ``axis``."""
    return sqrt(tsum(square(a), axis))


ACTIVATIONS = {
    "leaky_relu": leaky_relu,
    "relu": relu,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "identity": identity,
}


# --- differentiation ------------------------------------------------------

def _toposort(root, only_grad=True):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        if only_grad and not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def grad(objective, wrt, create_graph=False):
    """Gradients of a scalar ``objective`` with respect to each tensor in ``wrt``.

    With ``create_graph=True`` the returned gradients are recorded nodes and can
    be differentiated again. Tensors the objective does not depend on get zeros.
    """
    objective = as_tensor(objective)
    if objective.size != 1:
        raise ContractError(f"objective must be scalar, got shape {objective.shape}")
    wrt = list(wrt)
    if create_graph:
        lift = lambda t: t  # noqa: E731
    else:
        lift = lambda t: Tensor(t.value)  # noqa: E731

    grads = {id(objective): Tensor(np.ones_like(objective.value))}
    for node in reversed(_toposort(objective)):
        g = grads.get(id(node))
        if g is None or not node.parents:
            continue
        ins = [lift(p) for p in node.parents]
        try:
            contribs = node._vjp(g, ins, lift(node))
        except NumericalError as exc:
            raise NumericalError(f"{exc} while back-propagating through '{node.op}' node {id(node):#x}") from exc
        for p, c in zip(node.parents, contribs):
            if c is None or not p.requires_grad:
                continue
            prev = grads.get(id(p))
            grads[id(p)] = c if prev is None else add(prev, c)

    out = []
    for p in wrt:
        g = grads.get(id(p))
        if g is None:
            g = Tensor(np.zeros_like(p.value))
        elif not create_graph:
            g = Tensor(g.value)
        out.append(g)
    return out


def value_and_grad(fn):
    """Wrap ``fn(Tensor) -> scalar Tensor`` as ``x -> (float, ndarray)`` for optimizers."""
    def wrapped(x):
        xt = Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)
        y = fn(xt)
        (g,) = grad(y, [xt])
        return float(y.value), g.value
    return wrapped


class Tape:
    """Frozen topological record of the graph that produced ``outputs``.

    ``nodes`` lists ``(op, input_indices)`` in evaluation order; ``replay``
    re-runs the recorded forward functions, optionally with new leaf values.
    """

    def __init__(self, outputs):
        outputs = [outputs] if isinstance(outputs, Tensor) else list(outputs)
        order, seen = [], set()
        for out in outputs:
            for node in _toposort(out, only_grad=False):
                if id(node) not in seen:
                    seen.add(id(node))
                    order.append(node)
        self._order = order
        self._index = {id(n): i for i, n in enumerate(order)}
        self._outputs = [self._index[id(o)] for o in outputs]

    @property
    def nodes(self):
        return [(n.op, tuple(self._index[id(p)] for p in n.parents)) for n in self._order]

    @property
    def leaves(self):
        return [n for n in self._order if not n.parents]

    def replay(self, feeds=None):
        feeds = {id(k): np.asarray(v, dtype=np.float64) for k, v in (feeds or {}).items()}
        values = []
        for node in self._order:
            if not node.parents:
                values.append(feeds.get(id(node), node.value))
            else:
                values.append(np.asarray(node._fwd(*[values[self._index[id(p)]] for p in node.parents]),
                                         dtype=np.float64))
        return [values[i] for i in self._outputs]
