"""Reverse-mode automatic differentiation over dense float64 numpy arrays.

Forward values are computed eagerly; every primitive records a backward rule
on the node it returns. ``backward`` walks the recorded graph in reverse
topological order and *accumulates* into ``Node.grad``; callers zero
gradients between optimisation steps.
"""
from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np

_ids = itertools.count()


class ShapeError(ValueError):
    """Operand shapes do not conform for a primitive."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        joined = " vs ".join(str(s) for s in self.shapes)
        super().__init__(f"{op}: shape mismatch {joined}")


class NonFiniteError(FloatingPointError):
    """A forward value or gradient contains NaN or Inf."""

    def __init__(self, where: str):
        self.where = where
        super().__init__(f"non-finite value produced by {where}")


class Node:
    """A value in the autodiff graph.

    ``parents`` holds the input nodes; ``_backward`` maps the output adjoint to
    a tuple of parent adjoints (``None`` for parents that need no gradient).
    """

    __slots__ = ("id", "value", "_grad", "op", "parents", "requires_grad", "_backward")

    def __init__(self, value, requires_grad: bool = False, op: str = "const",
                 parents: tuple = (), backward=None):
        value = np.asarray(value, dtype=np.float64)
        self.id = next(_ids)
        self.value = value
        self._grad = None
        self.op = op
        self.parents = parents
        self.requires_grad = requires_grad
        self._backward = backward

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            return np.zeros_like(self.value)
        return self._grad

    @grad.setter
    def grad(self, g):
        self._grad = None if g is None else np.asarray(g, dtype=np.float64)

    def zero_grad(self):
        self._grad = None

    def detach(self) -> "Node":
        return Node(self.value)

    def item(self) -> float:
        return float(self.value)

    def __repr__(self):
        return f"Node(op={self.op}, shape={self.shape})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if not np.isscalar(other):
            raise TypeError("Node division is only defined by a scalar")
        return scale(self, 1.0 / other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)


def as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def param(value) -> Node:
    """A trainable leaf."""
    return Node(np.array(value, dtype=np.float64), requires_grad=True, op="param")


def _make(value: np.ndarray, op: str, parents: tuple, backward) -> Node:
    if not np.isfinite(value).all():
        raise NonFiniteError(op)
    rg = any(p.requires_grad for p in parents)
    return Node(value, rg, op, parents if rg else (), backward if rg else None)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# ---------------------------------------------------------------- primitives

def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _make(a.value + b.value, "add", (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape("subtract", a, b)
    sa, sb = a.shape, b.shape
    return _make(a.value - b.value, "subtract", (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape("multiply", a, b)
    av, bv = a.value, b.value
    return _make(av * bv, "multiply", (a, b),
                 lambda g: (_unbroadcast(g * bv, av.shape) if a.requires_grad else None,
                            _unbroadcast(g * av, bv.shape) if b.requires_grad else None))


def scale(a, c: float) -> Node:
    a = as_node(a)
    c = float(c)
    return _make(a.value * c, "scale", (a,), lambda g: (g * c,))


def matmul(a, b) -> Node:
    """``a @ b`` with numpy semantics; a 2-D ``b`` is applied to the last axis of ``a``."""
    a, b = as_node(a), as_node(b)
    av, bv = a.value, b.value
    if av.ndim == 0 or bv.ndim == 0 or av.shape[-1] != bv.shape[-2 if bv.ndim > 1 else 0]:
        raise ShapeError("matmul", av.shape, bv.shape)
    if bv.ndim == 2:
        k, n = bv.shape

        def backward(g):
            ga = g @ bv.T if a.requires_grad else None
            gb = av.reshape(-1, k).T @ g.reshape(-1, n) if b.requires_grad else None
            return ga, gb
        return _make(av @ bv, "matmul", (a, b), backward)
    if av.ndim < 2 or bv.ndim < 2:
        raise ShapeError("matmul", av.shape, bv.shape)
    try:
        out = av @ bv
    except ValueError:
        raise ShapeError("matmul", av.shape, bv.shape) from None

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape) if b.requires_grad else None
        return ga, gb
    return _make(out, "matmul", (a, b), backward)


def concat(nodes: Sequence, axis: int = -1) -> Node:
    nodes = [as_node(n) for n in nodes]
    shapes = [n.shape for n in nodes]
    ref = shapes[0]
    ax = axis % len(ref)
    for s in shapes[1:]:
        if len(s) != len(ref) or any(x != y for i, (x, y) in enumerate(zip(s, ref)) if i != ax):
            raise ShapeError("concat", ref, s)
    cuts = np.cumsum([s[ax] for s in shapes])[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=ax))
    return _make(np.concatenate([n.value for n in nodes], axis=ax), "concat",
                 tuple(nodes), backward)


def stack(nodes: Sequence, axis: int = 0) -> Node:
    nodes = [as_node(n) for n in nodes]
    for n in nodes[1:]:
        if n.shape != nodes[0].shape:
            raise ShapeError("stack", nodes[0].shape, n.shape)

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))
    return _make(np.stack([n.value for n in nodes], axis=axis), "stack", tuple(nodes), backward)


def _is_basic(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(i is None or i is Ellipsis or isinstance(i, (slice, int, np.integer))
               for i in items)


def getitem(a, index) -> Node:
    """Slice or gather. Fancy indices scatter-add on the way back."""
    a = as_node(a)
    try:
        out = a.value[index]
    except IndexError as exc:
        raise ShapeError("slice", a.shape) from exc
    shape = a.shape
    basic = _is_basic(index)

    def backward(g):
        full = np.zeros(shape)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)
    return _make(np.array(out, dtype=np.float64), "slice", (a,), backward)


def reshape(a, shape) -> Node:
    a = as_node(a)
    old = a.shape
    try:
        out = a.value.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", old, shape) from None
    return _make(out, "reshape", (a,), lambda g: (g.reshape(old),))


def transpose(a, axes) -> Node:
    a = as_node(a)
    inv = np.argsort(axes)
    return _make(np.transpose(a.value, axes), "transpose", (a,),
                 lambda g: (np.transpose(g, inv),))


def broadcast_to(a, shape) -> Node:
    a = as_node(a)
    old = a.shape
    try:
        out = np.broadcast_to(a.value, shape)
    except ValueError:
        raise ShapeError("broadcast_to", old, shape) from None
    return _make(out, "broadcast_to", (a,), lambda g: (_unbroadcast(g, old),))


def tanh(a) -> Node:
    a = as_node(a)
    y = np.tanh(a.value)
    return _make(y, "tanh", (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a) -> Node:
    a = as_node(a)
    x = a.value
    # split form keeps exp() from overflowing on large |x|
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make(y, "sigmoid", (a,), lambda g: (g * y * (1.0 - y),))


def relu(a) -> Node:
    a = as_node(a)
    m = a.value > 0
    return _make(a.value * m, "relu", (a,), lambda g: (g * m,))


def exp(a) -> Node:
    a = as_node(a)
    with np.errstate(over="ignore"):
        y = np.exp(a.value)
    return _make(y, "exp", (a,), lambda g: (g * y,))


def square(a) -> Node:
    a = as_node(a)
    x = a.value
    return _make(x * x, "square", (a,), lambda g: (2.0 * g * x,))


def softmax(a, axis: int = -1, mask=None) -> Node:
    """Softmax along ``axis``. Entries where ``mask`` is False get weight 0."""
    a = as_node(a)
    x = a.value
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        shifted = np.where(mask, x, -np.inf)
        top = np.max(shifted, axis=axis, keepdims=True)
        top = np.where(np.isfinite(top), top, 0.0)
        ex = np.where(mask, np.exp(np.where(mask, x, 0.0) - top), 0.0)
    else:
        ex = np.exp(x - np.max(x, axis=axis, keepdims=True))
    denom = ex.sum(axis=axis, keepdims=True)
    y = ex / np.where(denom > 0, denom, 1.0)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)
    return _make(y, "softmax", (a,), backward)


def reduce_sum(a, axis=None, keepdims: bool = False) -> Node:
    a = as_node(a)
    shape = a.shape
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)
    return _make(np.asarray(out), "reduce_sum", (a,), backward)


def reduce_mean(a, axis=None, keepdims: bool = False) -> Node:
    a = as_node(a)
    x = a.value
    if axis is None:
        count = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([x.shape[i] for i in axes]))
    return scale(reduce_sum(a, axis, keepdims), 1.0 / count)


def l2norm(a, axis=None) -> Node:
    """Euclidean norm over ``axis`` (all axes when None); subgradient 0 at the origin."""
    a = as_node(a)
    x = a.value
    n = np.sqrt((x * x).sum(axis=axis))

    def backward(g):
        safe = np.where(n > 0, n, 1.0)
        coef = np.where(n > 0, g / safe, 0.0)
        if axis is None:
            return (coef * x,)
        return (np.expand_dims(coef, axis) * x,)
    return _make(np.asarray(n), "l2norm", (a,), backward)


# ------------------------------------------------------------------ backward

def _topo_order(root: Node) -> list:
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if node.id in seen:
            continue
        seen.add(node.id)
        stack_.append((node, True))
        for p in node.parents:
            if p.requires_grad and p.id not in seen:
                stack_.append((p, False))
    return order


def backward(root: Node, leaves_only: bool = False) -> dict:
    """Accumulate d(root)/d(node) into ``grad`` of every reachable node.

    Returns the adjoints of this pass keyed by node id. With ``leaves_only``
    only parentless nodes (parameters) receive gradients, each adjoint is
    dropped once consumed, and the returned map is empty; training uses this
    to keep peak memory close to the size of the graph itself.
    """
    if root.shape != ():
        raise ShapeError("backward (root must be scalar)", root.shape)
    if not root.requires_grad:
        return {}
    adj = {root.id: np.ones(())}
    order = _topo_order(root)
    for node in reversed(order):
        g = adj.pop(node.id, None) if leaves_only and node.parents else adj.get(node.id)
        if g is None or node._backward is None:
            continue
        grads = node._backward(g)
        for p, gp in zip(node.parents, grads):
            if gp is None or not p.requires_grad:
                continue
            prev = adj.get(p.id)
            adj[p.id] = gp if prev is None else prev + gp
    for node in order:
        g = adj.get(node.id)
        if g is None:
            continue
        if not np.isfinite(g).all():
            raise NonFiniteError(f"backward through {node.op}")
        node._grad = np.array(g, dtype=np.float64) if node._grad is None else node._grad + g
    return {} if leaves_only else adj


# ------------------------------------------------------- numerical utilities

def fd_jacobian(f: Callable, at, h: float = 1e-5):
    """Central-difference Jacobian ``J[p, q]`` of ``f`` at ``at``.

    With a plain array, ``f`` maps arrays to arrays and the result is an
    array of shape ``out.shape + at.shape``. With a ``Node``, ``f`` maps nodes
    to nodes; the perturbed evaluations stay in the graph so the estimate is
    differentiable with respect to whatever ``f`` closes over.
    """
    if not h > 0:
        raise ValueError("fd_jacobian: step must be positive")
    if isinstance(at, Node):
        cols = []
        for q in range(at.value.size):
            e = np.zeros(at.shape)
            e.flat[q] = h
            hi, lo = as_node(f(at + e)), as_node(f(at - e))
            if not (np.isfinite(hi.value).all() and np.isfinite(lo.value).all()):
                raise NonFiniteError("fd_jacobian")
            cols.append(scale(sub(hi, lo), 0.5 / h))
        out_shape = cols[0].shape
        J = stack(cols, axis=-1)
        return reshape(J, out_shape + at.shape)
    x = np.array(at, dtype=np.float64)
    out0 = np.asarray(f(x.copy()), dtype=np.float64)
    J = np.zeros(out0.shape + (x.size,))
    for q in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp.flat[q] += h
        xm.flat[q] -= h
        hi = np.asarray(f(xp), dtype=np.float64)
        lo = np.asarray(f(xm), dtype=np.float64)
        if not (np.isfinite(hi).all() and np.isfinite(lo).all()):
            raise NonFiniteError("fd_jacobian")
        J[..., q] = (hi - lo) / (2.0 * h)
    return J.reshape(out0.shape + x.shape)


class GradCheckReport:
    """Outcome of comparing taped gradients with central differences."""

    def __init__(self, max_rel_error: float, tol: float, worst: str = ""):
        self.max_rel_error = max_rel_error
        self.tol = tol
        self.worst = worst

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error <= self.tol)

    def __bool__(self):
        return self.passed

    def __repr__(self):
        verdict = "pass" if self.passed else "FAIL"
        return f"GradCheckReport({verdict}, max_rel_error={self.max_rel_error:.3e}, tol={self.tol:g})"


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max abs difference scaled by the larger of the two gradients' max magnitude."""
    a, b = np.ravel(analytic), np.ravel(numeric)
    denom = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0))
    diff = np.abs(a - b).max(initial=0.0)
    if denom == 0.0:
        return float(diff)
    return float(diff / denom)


def grad_check(f: Callable, at, tol: float = 1e-4, h: float = 1e-5) -> GradCheckReport:
    """Check ``backward`` against ``fd_jacobian`` for a scalar-valued ``f``.

    ``at`` is an array (``f`` takes one Node) or a dict of arrays (``f`` takes
    a dict of Nodes). Failure is reported, not raised.
    """
    named = isinstance(at, dict)
    arrays = dict(at) if named else {"x": np.asarray(at, dtype=np.float64)}
    arrays = {k: np.array(v, dtype=np.float64) for k, v in arrays.items()}

    leaves = {k: param(v) for k, v in arrays.items()}
    out = f(leaves if named else leaves["x"])
    backward(out)
    worst_err, worst_name = 0.0, ""
    for k, v in arrays.items():
        def f_k(x, k=k):
            vals = {kk: Node(vv) for kk, vv in arrays.items()}
            vals[k] = Node(x)
            return f(vals if named else vals["x"]).value
        numeric = fd_jacobian(f_k, v, h)
        err = relative_error(leaves[k].grad, numeric)
        if err > worst_err or not worst_name:
            worst_err, worst_name = err, k
    return GradCheckReport(worst_err, tol, worst_name)
