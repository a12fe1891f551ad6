"""Small reverse-mode automatic differentiation over dense numpy arrays.

Every op accepts plain arrays or :class:`Node` objects.  When none of the
inputs is a node the op simply returns a numpy array, so model and SCM code
can be written once and run either as a plain forward pass or while
recording a graph for differentiation.

Example
-------
>>> w = leaf(np.array([2.0, -1.0]))
>>> x = leaf(np.array([0.5, 3.0]))
>>> root = dot(w, x)
>>> gradient(root, [x])[0]
array([ 2., -1.])
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from . import kernels

__all__ = [
    "Node",
    "ShapeError",
    "Tape",
    "leaf",
    "value_of",
    "is_node",
    "evaluate",
    "gradient",
    "value_and_grad",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "dot",
    "sum",
    "mean",
    "tanh",
    "relu",
    "sigmoid",
    "log",
    "exp",
    "abs",
    "square",
    "log_sigmoid",
    "norm1",
    "norm2",
    "getitem",
    "reshape",
    "transpose",
    "stack",
    "mlp",
    "input_gradient_stencil",
]


class ShapeError(ValueError):
    """Raised when an op receives operands of incompatible shapes."""

    def __init__(self, op: str, shapes: Sequence[tuple], detail: str = ""):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        msg = f"shape mismatch in node '{op}': operand shapes {list(self.shapes)}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class Node:
    """A value in the computation graph.

    ``vjp`` maps the adjoint of this node to a tuple with one adjoint per
    parent (``None`` for parents that do not need one).
    """

    __slots__ = ("value", "parents", "vjp", "requires_grad", "op", "grad")

    def __init__(self, value, parents=(), vjp=None, op="leaf", requires_grad=None):
        self.value = value
        self.parents = parents
        self.vjp = vjp
        self.op = op
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in parents)
        self.requires_grad = requires_grad
        self.grad = None

    @property
    def shape(self):
        return np.shape(self.value)

    @property
    def ndim(self):
        return np.ndim(self.value)

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.shape})"

    __array_priority__ = 100.0

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

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return getitem(self, key)

    @property
    def T(self):
        return transpose(self)


def leaf(value, requires_grad: bool = True) -> Node:
    """Create a graph input. Values are copied to float64 arrays."""
    return Node(np.array(value, dtype=np.float64), (), None, "leaf", requires_grad)


def is_node(x) -> bool:
    return isinstance(x, Node)


def value_of(x):
    return x.value if isinstance(x, Node) else x


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    ndiff = g.ndim - len(shape)
    if ndiff > 0:
        g = g.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(op, *vals):
    try:
        return np.broadcast_shapes(*(np.shape(v) for v in vals))
    except ValueError as exc:
        raise ShapeError(op, [np.shape(v) for v in vals], str(exc)) from None


def _make(value, parents, vjp, op):
    return Node(value, tuple(parents), vjp, op)


# ---------------------------------------------------------------------------
# elementwise binary ops


def _binary(op, fn, a, b, grads):
    a_is, b_is = isinstance(a, Node), isinstance(b, Node)
    if not (a_is or b_is):
        return fn(a, b)
    av = a.value if a_is else a
    bv = b.value if b_is else b
    try:
        out = fn(av, bv)
    except ValueError as exc:
        raise ShapeError(op, [np.shape(av), np.shape(bv)], str(exc)) from None
    oshape = np.shape(out)
    sa, sb = np.shape(av), np.shape(bv)
    need_a = a_is and a.requires_grad
    need_b = b_is and b.requires_grad

    def vjp(g):
        ga, gb = grads(g, av, bv, out, need_a, need_b)
        res = []
        if a_is:
            res.append(None if ga is None else (ga if sa == oshape else _unbroadcast(ga, sa)))
        if b_is:
            res.append(None if gb is None else (gb if sb == oshape else _unbroadcast(gb, sb)))
        return tuple(res)

    parents = (a, b) if (a_is and b_is) else ((a,) if a_is else (b,))
    return _make(out, parents, vjp, op)


def add(a, b):
    return _binary("add", np.add, a, b,
                   lambda g, av, bv, o, na, nb: (g if na else None, g if nb else None))


def sub(a, b):
    return _binary("sub", np.subtract, a, b,
                   lambda g, av, bv, o, na, nb: (g if na else None, -g if nb else None))


def mul(a, b):
    return _binary("mul", np.multiply, a, b,
                   lambda g, av, bv, o, na, nb: (g * bv if na else None, g * av if nb else None))


def div(a, b):
    return _binary("div", np.divide, a, b,
                   lambda g, av, bv, o, na, nb: (g / bv if na else None, -g * o / bv if nb else None))


def _parents(*xs):
    return tuple(x for x in xs if is_node(x))


def _wrap2(vjp, a, b):
    # drop adjoints for non-node operands so they line up with parents
    if is_node(a) and is_node(b):
        return vjp
    if is_node(a):
        return lambda g: (vjp(g)[0],)
    return lambda g: (vjp(g)[1],)


def neg(a):
    if not is_node(a):
        return np.negative(a)
    return _make(-a.value, (a,), lambda g: (-g,), "neg")


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b):
    """Matrix product with numpy ``@`` semantics (covers matvec and vecmat)."""
    av, bv = value_of(a), value_of(b)
    try:
        out = np.matmul(av, bv)
    except ValueError as exc:
        raise ShapeError("matmul", [np.shape(av), np.shape(bv)], str(exc)) from None
    if not (is_node(a) or is_node(b)):
        return out
    av = np.asarray(av)
    bv = np.asarray(bv)
    need_a = is_node(a) and a.requires_grad
    need_b = is_node(b) and b.requires_grad

    def vjp(g):
        ga = gb = None
        a2 = av[None, :] if av.ndim == 1 else av
        b2 = bv[:, None] if bv.ndim == 1 else bv
        g2 = g
        if av.ndim == 1:
            g2 = np.expand_dims(g2, -2)
        if bv.ndim == 1:
            g2 = np.expand_dims(g2, -1)
        if need_a:
            ga = g2 @ np.swapaxes(b2, -1, -2)
            if av.ndim == 1:
                ga = ga.reshape(ga.shape[:-2] + ga.shape[-1:])
            ga = _unbroadcast(ga, av.shape)
        if need_b:
            gb = np.swapaxes(a2, -1, -2) @ g2
            if bv.ndim == 1:
                gb = gb[..., 0]
            gb = _unbroadcast(gb, bv.shape)
        return ga, gb

    return _make(out, _parents(a, b), _wrap2(vjp, a, b), "matmul")


def dot(a, b):
    """Inner product over the last axis (batched over leading axes)."""
    av, bv = value_of(a), value_of(b)
    if np.shape(av)[-1:] != np.shape(bv)[-1:]:
        raise ShapeError("dot", [np.shape(av), np.shape(bv)], "last axes differ")
    return sum(mul(a, b), axis=-1)


# ---------------------------------------------------------------------------
# reductions


def sum(a, axis=None):
    if not is_node(a):
        return np.sum(a, axis=axis)
    shape = a.shape

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _make(np.sum(a.value, axis=axis), (a,), vjp, "sum")


def mean(a, axis=None):
    n = np.size(value_of(a)) if axis is None else np.shape(value_of(a))[axis]
    return mul(sum(a, axis=axis), 1.0 / n)


def norm1(a, axis=-1):
    if not is_node(a):
        return np.sum(np.abs(a), axis=axis)
    v = a.value

    def vjp(g):
        return (np.expand_dims(g, axis) * np.sign(v),)

    return _make(np.sum(np.abs(v), axis=axis), (a,), vjp, "norm1")


def norm2(a, axis=-1):
    if not is_node(a):
        return np.sqrt(np.sum(np.square(a), axis=axis))
    v = a.value
    out = np.sqrt(np.sum(v * v, axis=axis))

    def vjp(g):
        safe = np.where(out > 0, out, 1.0)
        scale = np.where(out > 0, g / safe, 0.0)
        return (np.expand_dims(scale, axis) * v,)

    return _make(out, (a,), vjp, "norm2")


# ---------------------------------------------------------------------------
# elementwise unary ops


def _unary(name, fwd, dfn):
    def op(a):
        if not is_node(a):
            return fwd(a)
        v = a.value
        out = fwd(v)
        return _make(out, (a,), lambda g: (g * dfn(v, out),), name)

    op.__name__ = name
    return op


tanh = _unary("tanh", np.tanh, lambda v, o: 1.0 - o * o)
relu = _unary("relu", lambda v: np.maximum(v, 0.0), lambda v, o: (v > 0).astype(np.float64))
sigmoid = _unary("sigmoid", expit, lambda v, o: o * (1.0 - o))
log = _unary("log", np.log, lambda v, o: 1.0 / v)
exp = _unary("exp", np.exp, lambda v, o: o)
abs = _unary("abs", np.abs, lambda v, o: np.sign(v))
square = _unary("square", np.square, lambda v, o: 2.0 * v)
log_sigmoid = _unary(
    "log_sigmoid", lambda v: -np.logaddexp(0.0, -v), lambda v, o: expit(-v)
)


# ---------------------------------------------------------------------------
# structural ops


def getitem(a, key):
    if not is_node(a):
        return np.asarray(a)[key]
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, key, g)
        return (out,)

    return _make(a.value[key], (a,), vjp, "getitem")


def reshape(a, shape):
    if not is_node(a):
        return np.reshape(a, shape)
    old = a.shape
    try:
        out = a.value.reshape(shape)
    except ValueError as exc:
        raise ShapeError("reshape", [old, tuple(np.atleast_1d(shape))], str(exc)) from None
    return _make(out, (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a, axes=None):
    if not is_node(a):
        return np.transpose(a, axes)
    inv = None if axes is None else np.argsort(axes)
    return _make(np.transpose(a.value, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def stack(items, axis=-1):
    vals = [value_of(x) for x in items]
    try:
        out = np.stack(np.broadcast_arrays(*vals), axis=axis)
    except ValueError as exc:
        raise ShapeError("stack", [np.shape(v) for v in vals], str(exc)) from None
    if not any(is_node(x) for x in items):
        return out
    nodes = [x for x in items if is_node(x)]
    positions = [i for i, x in enumerate(items) if is_node(x)]
    shapes = [np.shape(x.value) for x in nodes]

    def vjp(g):
        parts = np.moveaxis(g, axis, 0)
        return tuple(_unbroadcast(parts[i], s) for i, s in zip(positions, shapes))

    return _make(out, tuple(nodes), vjp, "stack")


# ---------------------------------------------------------------------------
# fused dense network


def mlp(x, params, activation="tanh"):
    """Logit of a dense network ``[W1, b1, ..., WL, bL]`` with scalar output.

    Hidden layers use ``activation``; the last layer is affine.  The leading
    axes of ``x`` are treated as batch axes.  Forward and backward passes run
    in the compiled kernel when it is available.
    """
    xv = np.asarray(value_of(x), dtype=np.float64)
    pv = [np.asarray(value_of(p), dtype=np.float64) for p in params]
    weights, biases = pv[0::2], pv[1::2]
    if xv.shape[-1] != weights[0].shape[0]:
        raise ShapeError("mlp", [xv.shape, weights[0].shape], "input width differs from first layer")
    lead = xv.shape[:-1]
    X = np.ascontiguousarray(xv.reshape(-1, xv.shape[-1]))
    out, acts = kernels.mlp_forward(X, weights, biases, activation)
    out = out.reshape(lead)
    if not (is_node(x) or any(is_node(p) for p in params)):
        return out
    need_x = is_node(x) and x.requires_grad
    flags = [is_node(p) and p.requires_grad for p in params]
    need_params = any(flags)
    parents = _parents(x, *params)

    def vjp(g):
        gX, gWs, gbs = kernels.mlp_backward(
            np.ascontiguousarray(np.reshape(g, -1), dtype=np.float64),
            X, weights, acts, activation, need_x, need_params,
        )
        grads = []
        if is_node(x):
            grads.append(None if gX is None else gX.reshape(xv.shape))
        for i, p in enumerate(params):
            if is_node(p):
                if not flags[i]:
                    grads.append(None)
                else:
                    grads.append(gWs[i // 2] if i % 2 == 0 else gbs[i // 2])
        return tuple(grads)

    return _make(out, parents, vjp, "mlp")


# ---------------------------------------------------------------------------
# input-gradient stencil


def input_gradient_stencil(score_fn: Callable, x, step: float = 1e-4, max_features: int = 64):
    """Central-difference estimate of the input gradient of ``score_fn``.

    ``x`` is a constant array of shape ``(n,)`` or ``(B, n)``.  The 2n shifted
    inputs are evaluated in one batched call, so the returned estimate stays
    differentiable with respect to whatever parameters ``score_fn`` closes
    over.
    """
    if step <= 0:
        raise ValueError("stencil step must be positive")
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    if n > max_features:
        raise ValueError(f"stencil limited to {max_features} features, got {n}")
    batch = x.reshape(-1, n)
    B = batch.shape[0]
    offsets = np.concatenate([np.eye(n), -np.eye(n)]) * step  # (2n, n)
    pts = (batch[None, :, :] + offsets[:, None, :]).reshape(2 * n * B, n)
    scores = score_fn(pts)
    if not np.all(np.isfinite(value_of(scores))):
        raise FloatingPointError("non-finite score at a stencil point")
    scores = reshape(scores, (2, n, B))
    diff = mul(sub(getitem(scores, 0), getitem(scores, 1)), 1.0 / (2.0 * step))  # (n, B)
    grad = transpose(diff)
    return reshape(grad, x.shape)


# ---------------------------------------------------------------------------
# backward pass


class Tape:
    """Topologically ordered record of the nodes reachable from a root."""

    def __init__(self, root: Node):
        self.root = root
        self.nodes = _toposort(root)

    def backward(self):
        root = self.root
        if np.size(root.value) != 1:
            raise ValueError(f"gradient requires a scalar root, got shape {root.shape}")
        for node in self.nodes:
            node.grad = None
        root.grad = np.ones_like(np.asarray(root.value, dtype=np.float64))
        for node in reversed(self.nodes):
            g = node.grad
            if g is None or node.vjp is None:
                continue
            pgrads = node.vjp(g)
            for p, pg in zip(node.parents, pgrads):
                if pg is None or not p.requires_grad:
                    continue
                if p.grad is None:
                    p.grad = np.array(pg, dtype=np.float64, copy=True)
                else:
                    p.grad = p.grad + pg
        return self


def _toposort(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def gradient(root: Node, leaves: Sequence[Node]):
    """Adjoints of ``leaves`` with respect to the scalar ``root``."""
    if not is_node(root):
        raise TypeError("root must be a graph node")
    for lf in leaves:
        lf.grad = None
    Tape(root).backward()
    out = []
    for lf in leaves:
        g = lf.grad
        out.append(np.zeros_like(lf.value) if g is None else g.reshape(lf.shape))
    return out


def evaluate(fn: Callable, *values):
    """Run ``fn`` on fresh leaves built from ``values``.

    Returns ``(root, leaves, tape)``; repeated calls give bit-identical values.
    """
    leaves = [leaf(v) for v in values]
    root = fn(*leaves)
    return root, leaves, Tape(root)


def value_and_grad(fn: Callable, *values):
    root, leaves, tape = evaluate(fn, *values)
    tape.backward()
    grads = [np.zeros_like(lf.value) if lf.grad is None else lf.grad for lf in leaves]
    return float(np.reshape(root.value, -1)[0]), grads
