"""Define-by-run reverse-mode automatic differentiation over float64 arrays.

Every operation on a :class:`Tensor` appends a node to the graph implicitly:
the output remembers its parents and a closure mapping the upstream gradient
to per-parent contributions. Node ids increase with creation order, so sorting
reachable nodes by id gives a topological order without any bookkeeping.

Only the operations needed for MLPs, Gaussian log-densities, the ELBO and
energy functions are provided.
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "NonFiniteError",
    "GraphError",
    "as_tensor",
    "backward",
    "grad",
    "matmul",
    "add",
    "sub",
    "mul",
    "neg",
    "scale",
    "tanh",
    "relu",
    "exp",
    "log",
    "square",
    "tsum",
    "mean",
    "take",
]

_ids = itertools.count()


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf."""


class GraphError(RuntimeError):
    """Raised on misuse of the graph (non-scalar backward, shape mismatch...)."""


def _check_finite(value: np.ndarray, op: str, node_id: int) -> None:
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"non-finite value produced by node {node_id} ({op})")


class Tensor:
    """A float64 array that participates in a computation graph.

    Leaves are created directly; interior tensors come out of the op functions
    below (or the operator overloads, which call them).
    """

    __slots__ = ("data", "requires_grad", "grad", "op", "parents", "_backward", "id", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.op = "leaf"
        self.parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.id = next(_ids)
        self.name = name
        _check_finite(self.data, self.label, self.id)

    @property
    def label(self) -> str:
        return self.name or self.op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _make(value: np.ndarray, op: str, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = value
    out.requires_grad = any(p.requires_grad for p in parents)
    out.grad = None
    out.op = op
    out.parents = parents
    out._backward = backward_fn
    out.id = next(_ids)
    out.name = None
    _check_finite(value, op, out.id)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise GraphError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from exc


# -- binary ops ---------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0 or a.shape[-1] != b.shape[0] or b.ndim > 2 or a.ndim > 2:
        raise GraphError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    value = a.data @ b.data

    def back(g):
        if b.ndim == 1:
            ga = np.multiply.outer(g, b.data) if a.ndim == 2 else g * b.data
            gb = a.data.T @ g if a.ndim == 2 else g * a.data
        elif a.ndim == 1:
            ga = b.data @ g
            gb = np.multiply.outer(a.data, g)
        else:
            ga = g @ b.data.T
            gb = a.data.T @ g
        return ga, gb

    return _make(value, "matmul", (a, b), back)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    return _make(a.data + b.data, "add", (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    return _make(a.data - b.data, "sub", (a, b),
                 lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    return _make(a.data * b.data, "mul", (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


# -- unary ops ----------------------------------------------------------------


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, "neg", (a,), lambda g: (-g,))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _make(a.data * c, "scale", (a,), lambda g: (g * c,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)
    return _make(t, "tanh", (a,), lambda g: (g * (1.0 - t * t),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), "relu", (a,), lambda g: (g * mask,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        e = np.exp(a.data)
    return _make(e, "exp", (a,), lambda g: (g * e,))


def expm1(a) -> Tensor:
    """``exp(a) - 1`` without the cancellation near zero."""
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        value = np.expm1(a.data)
    return _make(value, "expm1", (a,), lambda g: (g * (value + 1.0),))


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        value = np.log(a.data)
    return _make(value, "log", (a,), lambda g: (g / a.data,))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * a.data, "square", (a,), lambda g: (2.0 * g * a.data,))


def tsum(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    value = np.asarray(a.data.sum(axis=axis))

    def back(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(value, "sum", (a,), back)


def mean(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else a.shape[axis]
    value = np.asarray(a.data.mean(axis=axis))

    def back(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, a.shape).copy(),)

    return _make(value, "mean", (a,), back)


def take(a, index) -> Tensor:
    """Basic (slice/integer) indexing, e.g. ``h[:, :d]`` to split network heads."""
    a = as_tensor(a)
    value = np.array(a.data[index])

    def back(g):
        out = np.zeros_like(a.data)
        out[index] = g
        return (out,)

    return _make(value, "take", (a,), back)


# -- backward pass ------------------------------------------------------------


def _topo_order(output: Tensor) -> list[Tensor]:
    seen: dict[int, Tensor] = {}
    stack = [output]
    while stack:
        node = stack.pop()
        if node.id in seen or not node.requires_grad:
            continue
        seen[node.id] = node
        stack.extend(node.parents)
    return [seen[k] for k in sorted(seen)]


def _propagate(output: Tensor, relevant: Callable[[Tensor], bool] | None = None):
    if output.size != 1:
        raise GraphError(f"backward needs a scalar output, got shape {output.shape}")
    nodes = _topo_order(output)
    if relevant is not None:
        live: set[int] = set()
        for node in nodes:
            if relevant(node) or any(p.id in live for p in node.parents):
                live.add(node.id)
        nodes = [n for n in nodes if n.id in live]
    else:
        live = {n.id for n in nodes}
    grads: dict[int, np.ndarray] = {output.id: np.ones_like(output.data)}
    for node in reversed(nodes):
        g = grads.get(node.id)
        if g is None or node._backward is None:
            continue
        for parent, pg in zip(node.parents, node._backward(g)):
            if pg is None or parent.id not in live:
                continue
            _check_finite(pg, f"backward of {node.op}", node.id)
            if parent.id in grads:
                grads[parent.id] = grads[parent.id] + pg
            else:
                grads[parent.id] = pg
    return grads, nodes


def backward(output: Tensor) -> None:
    """Accumulate d(output)/d(leaf) into ``leaf.grad`` for every leaf requiring grad."""
    if not output.requires_grad:
        return
    grads, nodes = _propagate(output)
    for node in nodes:
        if node.op == "leaf" and node.id in grads:
            g = grads[node.id].reshape(node.shape)
            node.grad = g.copy() if node.grad is None else node.grad + g


def grad(output: Tensor, wrt: Iterable[Tensor]) -> list[np.ndarray]:
    """Gradients of a scalar ``output`` w.r.t. ``wrt`` without touching ``.grad``.

    Only nodes on a path between ``wrt`` and ``output`` are visited, so asking
    for an input gradient skips the weight-gradient products entirely.
    """
    wrt = list(wrt)
    targets = {t.id for t in wrt}
    if output.requires_grad:
        grads, _ = _propagate(output, relevant=lambda n: n.id in targets)
    else:
        grads = {}
    return [grads[t.id].reshape(t.shape).copy() if t.id in grads else np.zeros_like(t.data)
            for t in wrt]
