"""Dense float64 tensors with a recorded graph and reverse-mode differentiation.

Every primitive is recorded on a :class:`Graph` whenever one of its inputs
lives on that graph.  Vector-Jacobian products are themselves written with
primitives, so the backward pass can be recorded too (``create_graph``) and
differentiated a second time.  That is what the gradient penalty needs.

A tensor without a node is a constant: it never receives a gradient.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.special import expit

LEAKY_SLOPE = 0.2


class ShapeError(ValueError):
    pass


class DomainError(ArithmeticError):
    pass


class ContractError(ValueError):
    pass


@dataclass(slots=True)
class Node:
    op: str
    args: tuple["Tensor", ...]
    attrs: dict[str, Any]
    value: np.ndarray


@dataclass
class Graph:
    """Append-only tape of primitive applications.

    Node ``i`` only ever refers to nodes with smaller indices, so the tape is
    topologically ordered by construction.  :meth:`reset` bumps the generation
    counter, which invalidates every tensor recorded before.
    """

    nodes: list[Node] = field(default_factory=list)
    generation: int = 0

    def leaf(self, value) -> "Tensor":
        arr = _as_array(value)
        self.nodes.append(Node("leaf", (), {}, arr))
        return Tensor(arr, self, len(self.nodes) - 1)

    def leaves(self, values: Sequence) -> list["Tensor"]:
        return [self.leaf(v) for v in values]

    def reset(self) -> None:
        self.nodes = []
        self.generation += 1

    def replay(self) -> list[np.ndarray]:
        """Re-run every recorded forward computation from the leaves."""
        values: list[np.ndarray] = []
        for node in self.nodes:
            if node.op == "leaf":
                values.append(node.value)
                continue
            ins = [values[a.node] if a.node is not None else a.value for a in node.args]
            values.append(_FORWARD[node.op](*ins, **node.attrs))
        return values

    def __len__(self) -> int:
        return len(self.nodes)


class Tensor:
    __slots__ = ("value", "graph", "node", "generation")
    __array_ufunc__ = None  # numpy operands defer to the reflected operators below

    def __init__(self, value, graph: Graph | None = None, node: int | None = None):
        self.value = _as_array(value)
        self.graph = graph if node is not None else None
        self.node = node
        self.generation = graph.generation if graph is not None else 0

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return self.value.size

    @property
    def is_constant(self) -> bool:
        return self.node is None

    def numpy(self) -> np.ndarray:
        return self.value

    def item(self) -> float:
        if self.value.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.value.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.value)

    def __repr__(self) -> str:
        tag = "const" if self.node is None else f"node={self.node}"
        return f"Tensor(shape={self.shape}, {tag})"

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

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def _as_array(value) -> np.ndarray:
    if isinstance(value, Tensor):
        return value.value
    arr = np.asarray(value, dtype=np.float64)
    return arr


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


# ---------------------------------------------------------------------------
# forward rules


def _fw_softmax(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _fw_sum(x, axis=None, keepdims=False):
    return np.asarray(np.sum(x, axis=axis, keepdims=keepdims), dtype=np.float64)


def _fw_mean(x, axis=None, keepdims=False):
    return np.asarray(np.mean(x, axis=axis, keepdims=keepdims), dtype=np.float64)


def _fw_slice(x, axis, start, stop):
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    return x[tuple(index)]


_FORWARD: dict[str, Callable[..., np.ndarray]] = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": np.divide,
    "matmul": np.matmul,
    "exp": np.exp,
    "log": np.log,
    "pow": lambda x, exponent: np.power(x, exponent),
    "neg": np.negative,
    "sum": _fw_sum,
    "mean": _fw_mean,
    "sqrt": np.sqrt,
    "maximum": np.maximum,
    "leaky_relu": lambda x: np.where(x > 0, x, LEAKY_SLOPE * x),
    "sigmoid": expit,
    "tanh": np.tanh,
    "softmax": _fw_softmax,
    "reshape": lambda x, shape: x.reshape(shape),
    "broadcast": lambda x, shape: np.broadcast_to(x, shape),
    "transpose": lambda x: x.T,
    "concat": lambda *xs, axis: np.concatenate(xs, axis=axis),
    "slice": _fw_slice,
    "square": np.square,
    "l2norm": lambda x: np.sqrt(np.sum(x * x, axis=-1)),
}


# ---------------------------------------------------------------------------
# primitive application


def broadcast_shapes(op: str, a: tuple[int, ...], b: tuple[int, ...]) -> tuple[int, ...]:
    """Trailing-axis broadcast; anything else is a ShapeError naming ``op``."""
    n = max(len(a), len(b))
    pa = (1,) * (n - len(a)) + a
    pb = (1,) * (n - len(b)) + b
    out = []
    for da, db in zip(pa, pb):
        if da == db or db == 1:
            out.append(da)
        elif da == 1:
            out.append(db)
        else:
            raise ShapeError(f"{op}: incompatible shapes {a} and {b}")
    return tuple(out)


def _check_domain(op: str, values: list[np.ndarray], attrs: dict) -> None:
    if op == "log" and np.any(values[0] <= 0):
        raise DomainError("log: non-positive input")
    if op == "div" and np.any(values[1] == 0):
        raise DomainError("div: division by zero")
    if op == "sqrt" and np.any(values[0] < 0):
        raise DomainError("sqrt: negative input")
    if op == "pow":
        p = attrs["exponent"]
        x = values[0]
        if p != int(p) and np.any(x < 0):
            raise DomainError(f"pow: negative base with non-integer exponent {p}")
        if p < 0 and np.any(x == 0):
            raise DomainError(f"pow: zero base with negative exponent {p}")


def _check_shapes(op: str, values: list[np.ndarray], attrs: dict) -> None:
    if op == "matmul":
        a, b = values
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    elif op == "reshape":
        if math.prod(attrs["shape"]) != values[0].size:
            raise ShapeError(f"reshape: cannot reshape {values[0].shape} to {attrs['shape']}")
    elif op == "broadcast":
        target = tuple(attrs["shape"])
        if broadcast_shapes("broadcast", values[0].shape, target) != target:
            raise ShapeError(f"broadcast: cannot broadcast {values[0].shape} to {target}")
    elif op == "concat":
        axis = attrs["axis"]
        ref = values[0]
        for v in values[1:]:
            if v.ndim != ref.ndim or any(
                i != axis % ref.ndim and s != r for i, (s, r) in enumerate(zip(v.shape, ref.shape))
            ):
                raise ShapeError(f"concat: incompatible shapes {ref.shape} and {v.shape}")
    elif op in ("softmax", "l2norm") and values[0].ndim == 0:
        raise ShapeError(f"{op}: needs at least one axis, got shape ()")


_BINARY = {"add", "sub", "mul", "div", "maximum"}


def apply_primitive(op: str, inputs: Sequence, **attrs) -> Tensor:
    """Evaluate primitive ``op`` and record it when any input is on a graph."""
    if op not in _FORWARD:
        raise ContractError(f"unknown primitive {op!r}")
    args = [as_tensor(t) for t in inputs]
    if op in _BINARY:
        shape = broadcast_shapes(op, args[0].shape, args[1].shape)
        args = [a if a.shape == shape else broadcast(a, shape) for a in args]
    values = [a.value for a in args]
    _check_shapes(op, values, attrs)
    _check_domain(op, values, attrs)
    out = _FORWARD[op](*values, **attrs)
    graph = _common_graph(op, args)
    if graph is None:
        return Tensor(out)
    graph.nodes.append(Node(op, tuple(args), attrs, out))
    return Tensor(out, graph, len(graph.nodes) - 1)


def _common_graph(op: str, args: list[Tensor]) -> Graph | None:
    graph = None
    for a in args:
        if a.node is None:
            continue
        if a.generation != a.graph.generation:
            raise ContractError(f"{op}: input tensor belongs to a discarded graph generation")
        if graph is None:
            graph = a.graph
        elif a.graph is not graph:
            raise ContractError(f"{op}: inputs recorded on different graphs")
    return graph


# ---------------------------------------------------------------------------
# public primitive wrappers


def add(a, b):
    return apply_primitive("add", (a, b))


def sub(a, b):
    return apply_primitive("sub", (a, b))


def mul(a, b):
    return apply_primitive("mul", (a, b))


def div(a, b):
    return apply_primitive("div", (a, b))


def matmul(a, b):
    return apply_primitive("matmul", (a, b))


def exp(x):
    return apply_primitive("exp", (x,))


def log(x):
    return apply_primitive("log", (x,))


def power(x, exponent: float):
    return apply_primitive("pow", (x,), exponent=float(exponent))


def neg(x):
    return apply_primitive("neg", (x,))


def _norm_axis(axis):
    if isinstance(axis, list):
        return tuple(axis)
    return axis


def sum(x, axis=None, keepdims: bool = False):  # noqa: A001 - mirrors numpy
    return apply_primitive("sum", (x,), axis=_norm_axis(axis), keepdims=keepdims)


def mean(x, axis=None, keepdims: bool = False):
    return apply_primitive("mean", (x,), axis=_norm_axis(axis), keepdims=keepdims)


def sqrt(x):
    return apply_primitive("sqrt", (x,))


def maximum(a, b):
    return apply_primitive("maximum", (a, b))


def minimum(a, b):
    return neg(maximum(neg(a), neg(b)))


def clip(x, lo: float, hi: float):
    return minimum(maximum(x, lo), hi)


def leaky_relu(x):
    return apply_primitive("leaky_relu", (x,))


def sigmoid(x):
    return apply_primitive("sigmoid", (x,))


def tanh(x):
    return apply_primitive("tanh", (x,))


def softmax(x):
    """Softmax over the last axis."""
    return apply_primitive("softmax", (x,))


def log_softmax(x):
    """Log-softmax over the last axis.

    The max shift is a constant; softmax is shift invariant, so the gradient
    is unaffected.
    """
    x = as_tensor(x)
    shift = Tensor(x.value.max(axis=-1, keepdims=True))
    shifted = x - shift
    return shifted - log(sum(exp(shifted), axis=-1, keepdims=True))


def reshape(x, shape):
    return apply_primitive("reshape", (x,), shape=tuple(int(s) for s in shape))


def broadcast(x, shape):
    return apply_primitive("broadcast", (x,), shape=tuple(int(s) for s in shape))


def transpose(x):
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"transpose: expects a matrix, got shape {x.shape}")
    return apply_primitive("transpose", (x,))


def concat(xs: Sequence, axis: int = -1):
    xs = list(xs)
    if not xs:
        raise ContractError("concat: empty input list")
    if len(xs) == 1:
        return as_tensor(xs[0])
    return apply_primitive("concat", xs, axis=axis)


def slice_axis(x, start: int, stop: int, axis: int = -1):
    x = as_tensor(x)
    ax = axis % x.ndim
    n = x.shape[ax]
    if not (0 <= start <= stop <= n):
        raise ShapeError(f"slice: range [{start}, {stop}) outside axis {ax} of extent {n}")
    return apply_primitive("slice", (x,), axis=ax, start=start, stop=stop)


def square(x):
    return apply_primitive("square", (x,))


def l2norm(x):
    """Euclidean norm over the last axis."""
    return apply_primitive("l2norm", (x,))


# ---------------------------------------------------------------------------
# vector-Jacobian products, written with primitives so they can be recorded


def _sum_to(g: Tensor, shape: tuple[int, ...]) -> Tensor:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead:
        g = sum(g, axis=tuple(range(lead)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = sum(g, axis=axes, keepdims=True)
    return g if g.shape == shape else reshape(g, shape)


def _expand_reduced(g: Tensor, shape: tuple[int, ...], axis, keepdims: bool) -> Tensor:
    if not keepdims:
        if axis is None:
            kshape = (1,) * len(shape)
        else:
            axes = (axis,) if isinstance(axis, int) else axis
            axes = {a % len(shape) for a in axes}
            kshape = tuple(1 if i in axes else s for i, s in enumerate(shape))
        g = reshape(g, kshape)
    return broadcast(g, shape)


def _reduced_count(shape, axis) -> int:
    if axis is None:
        return math.prod(shape)
    axes = (axis,) if isinstance(axis, int) else axis
    return math.prod(shape[a] for a in axes)


def _vjp_slice(g, args, out, need, axis, start, stop):
    x = args[0]
    parts = []
    if start > 0:
        shape = list(x.shape)
        shape[axis] = start
        parts.append(Tensor(np.zeros(shape)))
    parts.append(g)
    if stop < x.shape[axis]:
        shape = list(x.shape)
        shape[axis] = x.shape[axis] - stop
        parts.append(Tensor(np.zeros(shape)))
    return (concat(parts, axis=axis),)


def _vjp_concat(g, args, out, need, axis):
    grads = []
    offset = 0
    for a, n in zip(args, need):
        width = a.shape[axis]
        grads.append(slice_axis(g, offset, offset + width, axis=axis) if n else None)
        offset += width
    return tuple(grads)


def _vjp_l2norm(g, args, out, need):
    x = args[0]
    kshape = out.shape + (1,)
    zero = out.value == 0
    denom = reshape(out, kshape)
    if np.any(zero):
        denom = denom + Tensor(zero.astype(np.float64).reshape(kshape))
    return (reshape(g, kshape) * x / denom,)


_VJP: dict[str, Callable[..., tuple]] = {
    "add": lambda g, args, out, need: (g, g),
    "sub": lambda g, args, out, need: (g, -g),
    "mul": lambda g, args, out, need: (
        g * args[1] if need[0] else None,
        g * args[0] if need[1] else None,
    ),
    "div": lambda g, args, out, need: (
        g / args[1] if need[0] else None,
        -g * args[0] / square(args[1]) if need[1] else None,
    ),
    "matmul": lambda g, args, out, need: (
        g @ transpose(args[1]) if need[0] else None,
        transpose(args[0]) @ g if need[1] else None,
    ),
    "exp": lambda g, args, out, need: (g * out,),
    "log": lambda g, args, out, need: (g / args[0],),
    "pow": lambda g, args, out, need, exponent: (
        g * exponent * power(args[0], exponent - 1.0),
    ),
    "neg": lambda g, args, out, need: (-g,),
    "sum": lambda g, args, out, need, axis, keepdims: (
        _expand_reduced(g, args[0].shape, axis, keepdims),
    ),
    "mean": lambda g, args, out, need, axis, keepdims: (
        _expand_reduced(g / float(_reduced_count(args[0].shape, axis)), args[0].shape, axis, keepdims),
    ),
    "sqrt": lambda g, args, out, need: (g * 0.5 / out,),
    "maximum": lambda g, args, out, need: (
        g * Tensor((args[0].value >= args[1].value).astype(np.float64)) if need[0] else None,
        g * Tensor((args[0].value < args[1].value).astype(np.float64)) if need[1] else None,
    ),
    "leaky_relu": lambda g, args, out, need: (
        g * Tensor(np.where(args[0].value > 0, 1.0, LEAKY_SLOPE)),
    ),
    "sigmoid": lambda g, args, out, need: (g * out * (1.0 - out),),
    "tanh": lambda g, args, out, need: (g * (1.0 - square(out)),),
    "softmax": lambda g, args, out, need: (
        out * (g - sum(g * out, axis=-1, keepdims=True)),
    ),
    "reshape": lambda g, args, out, need, shape: (reshape(g, args[0].shape),),
    "broadcast": lambda g, args, out, need, shape: (_sum_to(g, args[0].shape),),
    "transpose": lambda g, args, out, need: (transpose(g),),
    "concat": _vjp_concat,
    "slice": _vjp_slice,
    "square": lambda g, args, out, need: (g * 2.0 * args[0],),
    "l2norm": _vjp_l2norm,
}


# ---------------------------------------------------------------------------
# reverse-mode drivers


class GradientMap(dict):
    """Leaf node index -> gradient tensor.  Also indexable by the leaf tensor."""

    def __getitem__(self, key):
        if isinstance(key, Tensor):
            key = key.node
        return super().__getitem__(key)

    def __contains__(self, key):
        if isinstance(key, Tensor):
            key = key.node
        return super().__contains__(key)

    def arrays(self, leaves: Sequence[Tensor]) -> list[np.ndarray]:
        return [self[leaf].value for leaf in leaves]


def _reverse(output: Tensor, leaves: Sequence[Tensor], create_graph: bool) -> GradientMap:
    if output.size != 1:
        raise ContractError(f"backward: output must be a scalar, got shape {output.shape}")
    if output.node is None:
        raise ContractError("backward: output is a constant, not recorded on a graph")
    graph = output.graph
    if output.generation != graph.generation:
        raise ContractError("backward: output belongs to a discarded graph generation")
    targets = {}
    for leaf in leaves:
        if leaf.node is None or leaf.graph is not graph:
            raise ContractError("backward: every leaf must be recorded on the output's graph")
        targets[leaf.node] = leaf

    # only nodes that depend on a requested leaf need gradients
    top = output.node
    needed = bytearray(top + 1)
    for i in targets:
        if i <= top:
            needed[i] = 1
    nodes = graph.nodes
    for i in range(top + 1):
        if not needed[i]:
            for a in nodes[i].args:
                if a.node is not None and needed[a.node]:
                    needed[i] = 1
                    break

    result = GradientMap()
    grads: dict[int, Tensor] = {top: Tensor(np.ones(output.shape))}
    for i in range(top, -1, -1):
        g = grads.pop(i, None)
        if g is None or not needed[i]:
            continue
        if i in targets:
            result[i] = g
        node = nodes[i]
        if node.op == "leaf":
            continue
        need = tuple(a.node is not None and bool(needed[a.node]) for a in node.args)
        if create_graph:
            args = node.args
            out = Tensor(node.value, graph, i)
        else:
            args = tuple(Tensor(a.value) for a in node.args)
            out = Tensor(node.value)
            g = g if g.node is None else Tensor(g.value)
        in_grads = _VJP[node.op](g, args, out, need, **node.attrs)
        for a, n, ig in zip(node.args, need, in_grads):
            if not n or ig is None:
                continue
            prev = grads.get(a.node)
            grads[a.node] = ig if prev is None else prev + ig
    for i, leaf in targets.items():
        if i not in result:
            result[i] = Tensor(np.zeros(leaf.shape))
    return result


def backward(output: Tensor, leaves: Sequence[Tensor]) -> GradientMap:
    """Exact gradients of a scalar ``output``; entries are constants."""
    return _reverse(output, leaves, create_graph=False)


def backward_differentiable(output: Tensor, leaves: Sequence[Tensor]) -> GradientMap:
    """Like :func:`backward`, but the gradients are recorded on the graph."""
    return _reverse(output, leaves, create_graph=True)


def grad(output: Tensor, leaves: Sequence[Tensor]) -> list[np.ndarray]:
    return backward(output, leaves).arrays(leaves)


def finite_difference_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-5) -> float:
    """Max over coordinates of |analytic - central difference| / max(1, |analytic|)."""
    x = np.array(_as_array(x), dtype=np.float64)
    graph = Graph()
    leaf = graph.leaf(x.copy())
    try:
        analytic = backward(f(leaf), [leaf])[leaf].value
    except DomainError:
        return math.inf
    numeric = np.empty_like(x)
    flat = x.reshape(-1)
    out = numeric.reshape(-1)
    with np.errstate(all="ignore"):
        for i in range(flat.size):
            orig = flat[i]
            try:
                flat[i] = orig + eps
                hi = f(Tensor(x.copy())).item()
                flat[i] = orig - eps
                lo = f(Tensor(x.copy())).item()
            except DomainError:
                return math.inf
            finally:
                flat[i] = orig
            out[i] = (hi - lo) / (2 * eps)
        err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    if err.size == 0:
        return 0.0
    if not np.all(np.isfinite(err)):
        return math.inf
    return float(err.max())
