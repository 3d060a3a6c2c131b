"""Second-order input jets on top of a reverse-mode tape.

Every quantity is a :class:`Node` holding a numpy array. Nodes created from
parameters registered on a :class:`Tape` are recorded together with a
vector-Jacobian closure; nodes built only from constants are never recorded
and cost nothing beyond the numpy evaluation.

A :class:`Jet2` bundles three nodes: the value of a field, its gradient with
respect to the ``d`` spatial-temporal inputs and the diagonal of its Hessian.
Jet chain rules are expressed with ordinary node operations, so any scalar
assembled from jet components (including first and second input derivatives)
can be differentiated with respect to the parameters by :meth:`Tape.gradient`.

Arrays carry a batch of collocation points; the jet component layout is
``value.shape == S`` and ``grad.shape == diag2.shape == (d, *S)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np


class DomainError(ArithmeticError):
    """Raised when an operation is applied outside its mathematical domain."""


# ---------------------------------------------------------------------------
# tape nodes
# ---------------------------------------------------------------------------


class Node:
    """A recorded (or constant) array value.

    ``parents`` and ``vjp`` describe how to push an adjoint back to the
    inputs; ``vjp(g)`` returns one adjoint per parent (``None`` to skip).
    """

    __slots__ = ("value", "tape", "index", "parents", "vjp", "op")
    __array_priority__ = 100.0

    def __init__(self, value, tape=None, parents=(), vjp=None, op="const"):
        self.value = value
        self.tape = tape
        self.parents = parents
        self.vjp = vjp
        self.op = op
        self.index = -1
        if tape is not None:
            tape._record(self)

    @property
    def shape(self) -> tuple[int, ...]:
        return np.shape(self.value)

    @property
    def requires_grad(self) -> bool:
        return self.tape is not None

    def __repr__(self) -> str:
        kind = "tracked" if self.tape is not None else "const"
        return f"Node({self.op}, {kind}, shape={self.shape})"

    def __getitem__(self, idx):
        return getitem(self, idx)

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

    def __pow__(self, n):
        return powi(self, n)


def as_node(x) -> Node:
    if isinstance(x, Node):
        return x
    return Node(np.asarray(x, dtype=np.float64))


def const(x) -> Node:
    """Wrap an array as an untracked constant."""
    return Node(np.asarray(x, dtype=np.float64))


def _tape_of(*nodes: Node):
    tape = None
    for n in nodes:
        if n.tape is not None:
            if tape is None:
                tape = n.tape
            elif n.tape is not tape:
                raise ValueError("cannot combine nodes from different tapes")
    return tape


def _make(value, parents: tuple, vjp: Callable, op: str) -> Node:
    tape = _tape_of(*parents)
    if tape is None:
        return Node(value, op=op)
    return Node(value, tape, parents, vjp, op)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    ndiff = g.ndim - len(shape)
    if ndiff > 0:
        g = g.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementary node operations
# ---------------------------------------------------------------------------


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    sa, sb = a.shape, b.shape
    return _make(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
        "add",
    )


def sub(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    sa, sb = a.shape, b.shape
    return _make(
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)),
        "sub",
    )


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    av, bv = a.value, b.value
    return _make(
        av * bv,
        (a, b),
        lambda g: (_unbroadcast(g * bv, np.shape(av)), _unbroadcast(g * av, np.shape(bv))),
        "mul",
    )


def div(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    av, bv = a.value, b.value
    if np.any(bv == 0):
        raise DomainError("division by zero")
    out = av / bv
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / bv, np.shape(av)), _unbroadcast(-g * out / bv, np.shape(bv))),
        "div",
    )


def neg(a) -> Node:
    a = as_node(a)
    return _make(-a.value, (a,), lambda g: (-g,), "neg")


def scale(a, c: float) -> Node:
    a = as_node(a)
    c = float(c)
    return _make(c * a.value, (a,), lambda g: (c * g,), "scale")


def sin(a) -> Node:
    a = as_node(a)
    v = a.value
    return _make(np.sin(v), (a,), lambda g: (g * np.cos(v),), "sin")


def cos(a) -> Node:
    a = as_node(a)
    v = a.value
    return _make(np.cos(v), (a,), lambda g: (-g * np.sin(v),), "cos")


def sincos(a) -> tuple[Node, Node]:
    """``(sin a, cos a)`` whose adjoints reuse each other's values."""
    a = as_node(a)
    s, c = np.sin(a.value), np.cos(a.value)
    return _make(s, (a,), lambda g: (g * c,), "sin"), _make(c, (a,), lambda g: (-g * s,), "cos")


def tanh(a) -> Node:
    a = as_node(a)
    t = np.tanh(a.value)
    return _make(t, (a,), lambda g: (g * (1.0 - t * t),), "tanh")


def exp(a) -> Node:
    a = as_node(a)
    e = np.exp(a.value)
    return _make(e, (a,), lambda g: (g * e,), "exp")


def sqrt(a) -> Node:
    a = as_node(a)
    if np.any(a.value < 0):
        raise DomainError("square root of a negative number")
    s = np.sqrt(a.value)
    return _make(s, (a,), lambda g: (g * 0.5 / s,), "sqrt")


def powi(a, n: int) -> Node:
    """Integer power ``a**n``."""
    if int(n) != n:
        raise TypeError("powi requires an integer exponent")
    n = int(n)
    a = as_node(a)
    v = a.value
    if n < 0 and np.any(v == 0):
        raise DomainError("negative power of zero")
    if n == 0:
        return const(np.ones_like(v))
    if n == 1:
        return a
    if n == 2:
        return _make(v * v, (a,), lambda g: (2.0 * g * v,), "square")
    return _make(v**n, (a,), lambda g: (n * g * v ** (n - 1),), "powi")


def square(a) -> Node:
    return powi(a, 2)


def matmul(a, w) -> Node:
    """``a @ w`` for ``a`` of shape (..., k) and a 2-D ``w`` of shape (k, m)."""
    a, w = as_node(a), as_node(w)
    av, wv = a.value, w.value

    def vjp(g):
        ga = g @ wv.T if a.tape is not None else None
        gw = None
        if w.tape is not None:
            gw = av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gw

    return _make(av @ wv, (a, w), vjp, "matmul")


def getitem(a, idx) -> Node:
    a = as_node(a)
    shape = a.shape

    basic = _is_basic_index(idx)

    def vjp(g):
        out = np.zeros(shape)
        if basic:
            out[idx] = g
        else:
            np.add.at(out, idx, g)
        return (out,)

    return _make(a.value[idx], (a,), vjp, "getitem")


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is Ellipsis or i is None for i in items)


def reduce_sum(a, axis=None) -> Node:
    a = as_node(a)
    shape = a.shape

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _make(np.sum(a.value, axis=axis), (a,), vjp, "sum")


def mean(a, axis=None) -> Node:
    a = as_node(a)
    count = a.value.size if axis is None else a.shape[axis]
    if count == 0:
        raise ValueError("mean of an empty array")
    return scale(reduce_sum(a, axis), 1.0 / count)


def concat(nodes: Sequence, axis: int = 0) -> Node:
    nodes = [as_node(n) for n in nodes]
    sizes = [n.shape[axis] for n in nodes]
    bounds = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(nodes))
        )

    return _make(np.concatenate([n.value for n in nodes], axis=axis), tuple(nodes), vjp, "concat")


def where(mask, a, b) -> Node:
    """Elementwise select with a constant boolean ``mask``."""
    a, b = as_node(a), as_node(b)
    mask = np.asarray(mask, dtype=bool)
    sa, sb = a.shape, b.shape
    return _make(
        np.where(mask, a.value, b.value),
        (a, b),
        lambda g: (_unbroadcast(np.where(mask, g, 0.0), sa), _unbroadcast(np.where(mask, 0.0, g), sb)),
        "where",
    )


# ---------------------------------------------------------------------------
# parameter store and tape
# ---------------------------------------------------------------------------


@dataclass
class ParamStore:
    """Flat parameter vector with named, disjoint slices."""

    data: np.ndarray
    slices: dict[str, tuple[int, tuple[int, ...]]] = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        self.check()

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray]) -> "ParamStore":
        slices = {}
        chunks = []
        offset = 0
        for name, arr in arrays.items():
            arr = np.asarray(arr, dtype=np.float64)
            slices[name] = (offset, tuple(arr.shape))
            chunks.append(arr.ravel())
            offset += arr.size
        data = np.concatenate(chunks) if chunks else np.zeros(0)
        return cls(data, slices)

    def check(self) -> None:
        covered = 0
        for name, (offset, shape) in sorted(self.slices.items(), key=lambda kv: kv[1][0]):
            if offset != covered:
                raise ValueError(f"slice {name!r} leaves a gap or overlaps at offset {offset}")
            covered += int(np.prod(shape, dtype=int))
        if covered != self.data.size:
            raise ValueError(f"slices cover {covered} of {self.data.size} parameters")

    def __len__(self) -> int:
        return self.data.size

    @property
    def names(self) -> list[str]:
        return list(self.slices)

    def span(self, name: str) -> slice:
        offset, shape = self.slices[name]
        return slice(offset, offset + int(np.prod(shape, dtype=int)))

    def get(self, name: str) -> np.ndarray:
        offset, shape = self.slices[name]
        return self.data[self.span(name)].reshape(shape)

    def with_data(self, data: np.ndarray) -> "ParamStore":
        data = np.asarray(data, dtype=np.float64)
        if data.shape != self.data.shape:
            raise ValueError("parameter vector length mismatch")
        return ParamStore(data.copy(), dict(self.slices))

    def copy(self) -> "ParamStore":
        return self.with_data(self.data)

    def add_scalar(self, name: str, value: float) -> "ParamStore":
        if name in self.slices:
            raise ValueError(f"parameter {name!r} already registered")
        slices = dict(self.slices)
        slices[name] = (self.data.size, ())
        return ParamStore(np.append(self.data, float(value)), slices)

    def nodes(self, tape: "Tape | None" = None) -> dict[str, Node]:
        """Views of every slice, as tape leaves or as constants."""
        if tape is None:
            return {name: const(self.get(name)) for name in self.slices}
        return tape.watch(self)


class Tape:
    """Records tracked nodes in creation order.

    A tape belongs to a single ParamStore registration and is meant to be
    discarded after one gradient evaluation.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self._leaves: list[tuple[Node, slice]] = []
        self._size = 0

    def _record(self, node: Node) -> None:
        node.index = len(self.nodes)
        self.nodes.append(node)

    def __len__(self) -> int:
        return len(self.nodes)

    def watch(self, store: ParamStore) -> dict[str, Node]:
        if self._leaves:
            raise RuntimeError("a tape watches exactly one parameter store")
        self._size = len(store)
        out = {}
        for name in store.slices:
            leaf = Node(store.get(name), self, op=f"param:{name}")
            self._leaves.append((leaf, store.span(name)))
            out[name] = leaf
        return out

    def leaf(self, value) -> Node:
        """Register a single free-standing leaf (flat gradient is its own)."""
        if self._leaves:
            raise RuntimeError("a tape watches exactly one parameter store")
        value = np.asarray(value, dtype=np.float64)
        node = Node(value, self, op="leaf")
        self._size = value.size
        self._leaves.append((node, slice(0, value.size)))
        return node

    def gradient(self, loss: Node) -> np.ndarray:
        """Reverse sweep from a scalar ``loss``; returns the flat gradient."""
        if np.size(loss.value) != 1:
            raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
        flat = np.zeros(self._size)
        if loss.tape is None:
            return flat
        if loss.tape is not self:
            raise ValueError("loss was recorded on a different tape")
        adj: list = [None] * (loss.index + 1)
        adj[loss.index] = np.ones(loss.shape)
        nodes = self.nodes
        for k in range(loss.index, -1, -1):
            g = adj[k]
            if g is None:
                continue
            node = nodes[k]
            if node.vjp is None:
                continue
            for parent, gp in zip(node.parents, node.vjp(g)):
                if gp is None or parent.tape is not self:
                    continue
                j = parent.index
                adj[j] = gp if adj[j] is None else adj[j] + gp
        for leaf, span in self._leaves:
            g = adj[leaf.index] if leaf.index <= loss.index else None
            if g is not None:
                flat[span] = np.ravel(g)
        return flat


def backward(loss: Node) -> np.ndarray:
    """Gradient of a scalar node with respect to its tape's parameters."""
    if loss.tape is None:
        raise ValueError("loss does not depend on any tracked parameter")
    return loss.tape.gradient(loss)


# ---------------------------------------------------------------------------
# second-order jets
# ---------------------------------------------------------------------------


class Jet2:
    """Value, input gradient and diagonal input Hessian of a field.

    ``axes`` lists the inputs whose derivatives are carried (row ``i`` of
    ``grad`` belongs to input ``axes[i]``); by default all of them. A jet
    built with ``diag2=None`` carries first derivatives only. Restricted jets
    let stencils pay only for the derivatives they read.
    """

    __slots__ = ("value", "grad", "diag2", "axes")

    def __init__(self, value, grad, diag2, axes: Sequence[int] | None = None):
        self.value = as_node(value)
        self.grad = as_node(grad)
        self.diag2 = None if diag2 is None else as_node(diag2)
        if self.diag2 is not None and self.grad.shape != self.diag2.shape:
            raise ValueError("grad and diag2 must share a shape")
        if self.grad.shape[1:] != self.value.shape:
            raise ValueError("jet component shapes are inconsistent")
        k = self.grad.shape[0]
        self.axes = tuple(range(k)) if axes is None else tuple(int(a) for a in axes)
        if len(self.axes) != k:
            raise ValueError(f"jet carries {k} derivative rows but names {len(self.axes)} axes")

    @property
    def dim(self) -> int:
        return self.grad.shape[0]

    @property
    def second(self) -> bool:
        return self.diag2 is not None

    def _row(self, axis: int) -> int:
        try:
            return self.axes.index(axis)
        except ValueError:
            raise ValueError(f"jet does not carry derivatives along input {axis} (has {self.axes})") from None

    def d(self, axis: int) -> Node:
        return getitem(self.grad, self._row(axis))

    def d2(self, axis: int) -> Node:
        if self.diag2 is None:
            raise ValueError("jet carries first derivatives only")
        return getitem(self.diag2, self._row(axis))

    def covers(self, axes: Sequence[int], second: bool) -> bool:
        return set(axes) <= set(self.axes) and (self.second or not second)

    def restrict(self, axes: Sequence[int], second: bool = True) -> "Jet2":
        """The same field carrying only ``axes`` (and diag2 if ``second``)."""
        axes = tuple(axes)
        if axes == self.axes and second == self.second:
            return self
        if not self.covers(axes, second):
            raise ValueError(f"cannot restrict a jet over {self.axes} to {axes}")
        rows = [self._row(a) for a in axes]
        pick = rows if rows != list(range(self.dim)) else slice(None)
        grad = getitem(self.grad, pick)
        diag2 = getitem(self.diag2, pick) if second else None
        return Jet2(self.value, grad, diag2, axes)

    def numpy(self) -> tuple:
        return self.value.value, self.grad.value, None if self.diag2 is None else self.diag2.value

    def __repr__(self) -> str:
        return f"Jet2(axes={self.axes}, second={self.second}, shape={self.value.shape})"

    def __add__(self, other):
        return apply("add", self, other)

    def __radd__(self, other):
        return apply("add", other, self)

    def __sub__(self, other):
        return apply("sub", self, other)

    def __rsub__(self, other):
        return apply("sub", other, self)

    def __mul__(self, other):
        return apply("mul", self, other)

    def __rmul__(self, other):
        return apply("mul", other, self)

    def __truediv__(self, other):
        return apply("div", self, other)

    def __rtruediv__(self, other):
        return apply("div", other, self)

    def __neg__(self):
        return apply("neg", self)

    def __pow__(self, n):
        return apply("powi", self, n=n)


def seed(points: np.ndarray, axes: Sequence[int] | None = None, second: bool = True) -> Jet2:
    """Identity jets of the coordinates of ``points`` (shape (N, d)).

    Returns a jet of shape (N, d): component ``[:, j]`` is the j-th input.
    ``axes`` and ``second`` select the derivatives carried.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ValueError("points must have shape (N, d)")
    n, d = points.shape
    axes = tuple(range(d)) if axes is None else tuple(axes)
    grad = np.zeros((len(axes), n, d))
    for i, a in enumerate(axes):
        grad[i, :, a] = 1.0
    diag2 = const(np.zeros((len(axes), n, d))) if second else None
    return Jet2(const(points), const(grad), diag2, axes)


def coordinate(points: np.ndarray, axis: int) -> Jet2:
    """Jet of one input coordinate over a batch of points."""
    points = np.asarray(points, dtype=np.float64)
    n, d = points.shape
    grad = np.zeros((d, n))
    grad[axis] = 1.0
    return Jet2(const(points[:, axis]), const(grad), const(np.zeros((d, n))))


def constant_jet(value, dim: int | None = None, axes: Sequence[int] | None = None, second: bool = True) -> Jet2:
    value = np.asarray(value, dtype=np.float64)
    axes = tuple(range(dim)) if axes is None else tuple(axes)
    zeros = np.zeros((len(axes), *value.shape))
    return Jet2(const(value), const(zeros), const(zeros) if second else None, axes)


def _as_jet(x, like: Jet2) -> Jet2:
    if isinstance(x, Jet2):
        return x
    shape = like.value.shape
    if isinstance(x, Node):
        zeros = np.zeros((like.dim, *np.broadcast_shapes(x.shape, shape)))
        return Jet2(x * np.ones(shape), const(zeros), const(zeros) if like.second else None, like.axes)
    value = np.broadcast_to(np.asarray(x, dtype=np.float64), shape)
    return constant_jet(value, axes=like.axes, second=like.second)


def _common(f: Jet2, g: Jet2) -> tuple[Jet2, Jet2]:
    """Bring two jets to the derivatives both of them carry."""
    if f.axes == g.axes and f.second == g.second:
        return f, g
    axes = tuple(a for a in f.axes if a in g.axes)
    second = f.second and g.second
    return f.restrict(axes, second), g.restrict(axes, second)


def _d2(expr: Callable[[], Node], *jets: Jet2) -> Node | None:
    return expr() if all(j.second for j in jets) else None


def _unary(f: Jet2, v, d1, d2) -> Jet2:
    """Chain rule for h = s(f) given node values s(f), s'(f), s''(f).

    ``d2`` may be a thunk so first-order jets never build s''(f).
    """
    g = f.grad
    if not f.second:
        return Jet2(v, d1 * g, None, f.axes)
    d2 = d2() if callable(d2) else d2
    return Jet2(v, d1 * g, d2 * square(g) + d1 * f.diag2, f.axes)


def _rule_add(f, g):
    return Jet2(f.value + g.value, f.grad + g.grad, _d2(lambda: f.diag2 + g.diag2, f, g), f.axes)


def _rule_sub(f, g):
    return Jet2(f.value - g.value, f.grad - g.grad, _d2(lambda: f.diag2 - g.diag2, f, g), f.axes)


def _rule_mul(f, g):
    return Jet2(
        f.value * g.value,
        f.grad * g.value + f.value * g.grad,
        _d2(lambda: f.diag2 * g.value + scale(f.grad * g.grad, 2.0) + f.value * g.diag2, f, g),
        f.axes,
    )


def _rule_div(f, g):
    if np.any(g.value.value == 0):
        raise DomainError("division by zero")
    r = div(1.0, g.value)
    r2 = square(r)
    recip = _unary(g, r, -r2, lambda: scale(r2 * r, 2.0))
    return _rule_mul(f, recip)


def _rule_neg(f):
    return Jet2(-f.value, -f.grad, _d2(lambda: -f.diag2, f), f.axes)


def _rule_scale(f, c):
    return Jet2(scale(f.value, c), scale(f.grad, c), _d2(lambda: scale(f.diag2, c), f), f.axes)


def _rule_sin(f):
    s, c = sincos(f.value)
    return _unary(f, s, c, lambda: -s)


def _rule_cos(f):
    s, c = sincos(f.value)
    return _unary(f, c, -s, lambda: -c)


def _rule_tanh(f):
    t = tanh(f.value)
    d1 = 1.0 - square(t)
    return _unary(f, t, d1, lambda: scale(t * d1, -2.0))


def _rule_exp(f):
    e = exp(f.value)
    return _unary(f, e, e, e)


def _rule_sqrt(f):
    if np.any(f.value.value <= 0):
        raise DomainError("square root requires a positive argument")
    s = sqrt(f.value)
    inv = div(1.0, s)
    return _unary(f, s, scale(inv, 0.5), lambda: scale(inv * inv * inv, -0.25))


def _rule_powi(f, n):
    n = int(n)
    if n == 0:
        return constant_jet(np.ones(f.value.shape), axes=f.axes, second=f.second)
    if n == 1:
        return f
    v = f.value
    if n < 0 and np.any(v.value == 0):
        raise DomainError("negative power of zero")
    d1 = scale(powi(v, n - 1), n)

    def d2():
        return scale(powi(v, n - 2), n * (n - 1)) if n != 2 else const(np.full(v.shape, 2.0))

    return _unary(f, powi(v, n), d1, d2)


_BINARY = {"add": _rule_add, "sub": _rule_sub, "mul": _rule_mul, "div": _rule_div}
_UNARY = {
    "neg": _rule_neg,
    "sin": _rule_sin,
    "cos": _rule_cos,
    "tanh": _rule_tanh,
    "exp": _rule_exp,
    "sqrt": _rule_sqrt,
}
OP_KINDS = tuple(_BINARY) + tuple(_UNARY) + ("scale", "powi")


def apply(kind: str, *inputs, **kw) -> Jet2:
    """Apply an elementary operation to jets (or jets and constants)."""
    if kind in _BINARY:
        f, g = inputs
        like = f if isinstance(f, Jet2) else g
        f, g = _common(_as_jet(f, like), _as_jet(g, like))
        return _BINARY[kind](f, g)
    if kind in _UNARY:
        (f,) = inputs
        return _UNARY[kind](f)
    if kind == "scale":
        (f,) = inputs
        return _rule_scale(f, kw["c"])
    if kind == "powi":
        (f,) = inputs
        return _rule_powi(f, kw["n"])
    raise ValueError(f"unknown op kind {kind!r}; expected one of {OP_KINDS}")


def jsin(f: Jet2) -> Jet2:
    return apply("sin", f)


def jcos(f: Jet2) -> Jet2:
    return apply("cos", f)


def jtanh(f: Jet2) -> Jet2:
    return apply("tanh", f)


def jexp(f: Jet2) -> Jet2:
    return apply("exp", f)


def jsqrt(f: Jet2) -> Jet2:
    return apply("sqrt", f)


def jscale(f: Jet2, c: float) -> Jet2:
    return apply("scale", f, c=c)


def jaffine(f: Jet2, w, b=None) -> Jet2:
    """Linear layer ``f @ w + b`` applied componentwise to a jet."""
    value = matmul(f.value, w)
    if b is not None:
        value = value + b
    return Jet2(value, matmul(f.grad, w), _d2(lambda: matmul(f.diag2, w), f), f.axes)


def jet_getitem(f: Jet2, idx) -> Jet2:
    """Index the batch part of a jet (the derivative axis is kept)."""
    full = (slice(None),) + (idx if isinstance(idx, tuple) else (idx,))
    return Jet2(getitem(f.value, idx), getitem(f.grad, full), _d2(lambda: getitem(f.diag2, full), f), f.axes)


# ---------------------------------------------------------------------------
# finite-difference checking
# ---------------------------------------------------------------------------


@dataclass
class FDReport:
    max_error: float
    worst_index: int
    modes: list[str]
    errors: np.ndarray
    tape_grad: np.ndarray
    fd_grad: np.ndarray

    @property
    def uses_absolute(self) -> bool:
        return "absolute" in self.modes


def compare(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> tuple[np.ndarray, list[str]]:
    """Relative discrepancy, falling back to absolute where both are tiny."""
    a = np.ravel(np.asarray(a, dtype=np.float64))
    b = np.ravel(np.asarray(b, dtype=np.float64))
    mag = np.maximum(np.abs(a), np.abs(b))
    rel = mag >= floor
    err = np.where(rel, np.abs(a - b) / np.where(rel, mag, 1.0), np.abs(a - b))
    return err, ["relative" if r else "absolute" for r in rel]


def finite_diff_check(
    fn: Callable[[Node], Node],
    point,
    step: float = 1e-5,
    floor: float = 1e-8,
) -> FDReport:
    """Compare tape gradients of a scalar map against central differences.

    ``fn`` receives a node holding the flat point and must return a scalar
    node. It is evaluated once on a tape and ``2 * len(point)`` times on
    untracked constants.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    point = np.atleast_1d(np.asarray(point, dtype=np.float64)).copy()
    tape = Tape()
    x = tape.leaf(point)
    out = fn(x)
    grad = tape.gradient(out)
    fd = np.empty_like(point)
    for i in range(point.size):
        hi, lo = point.copy(), point.copy()
        hi[i] += step
        lo[i] -= step
        fd[i] = (float(np.sum(fn(const(hi)).value)) - float(np.sum(fn(const(lo)).value))) / (2 * step)
    err, modes = compare(grad, fd, floor)
    worst = int(np.argmax(err)) if err.size else -1
    return FDReport(float(err.max()) if err.size else 0.0, worst, modes, err, grad, fd)


def all_finite(jet: Jet2) -> bool:
    return all(np.all(np.isfinite(c)) for c in jet.numpy())


def nodes_of(jets: Iterable[Jet2]) -> list[Node]:
    out = []
    for j in jets:
        out.extend([j.value, j.grad, j.diag2])
    return out
