"""Reverse-mode differentiation over a small, closed operation catalog.

Values are float64 numpy arrays. A :class:`Graph` is built eagerly (each op
computes its value when added, so shape errors surface immediately with the
offending node id) and can be re-evaluated with :meth:`Graph.forward` after
parameter arrays are mutated in place, which is what :func:`grad_check` does.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

OPCODES = (
    "matmul", "add", "concat", "relu", "sigmoid", "softmax", "mean_rows",
    "sum", "scale", "log", "exp", "mul_elementwise", "bce", "embedding_lookup",
)

# log((1 - 1e-7) / 1e-7): probability clamp [1e-7, 1 - 1e-7] expressed on logits
LOGIT_CLAMP = float(np.log((1.0 - 1e-7) / 1e-7))


class GraphError(ValueError):
    def __init__(self, message, node_id=None):
        super().__init__(message if node_id is None else f"node {node_id}: {message}")
        self.node_id = node_id


class ShapeError(GraphError):
    pass


class NonFiniteError(GraphError):
    pass


class Node:
    __slots__ = ("id", "op", "inputs", "attrs", "value", "grad", "name", "requires_grad")

    def __init__(self, id, op, inputs, attrs, value, name=None, requires_grad=False):
        self.id = id
        self.op = op
        self.inputs = inputs
        self.attrs = attrs
        self.value = value
        self.grad = None
        self.name = name
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node({self.id}, {self.op}, shape={self.value.shape})"


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# --- forward rules: (values, attrs) -> array --------------------------------

def _fwd_matmul(vals, attrs):
    a, b = vals
    if attrs.get("transpose_b"):
        if a.shape[-1] != b.shape[-1]:
            raise ShapeError(f"matmul a{a.shape} @ b{b.shape}.T")
        return a @ b.T
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul a{a.shape} @ b{b.shape}")
    return a @ b


def _fwd_add(vals, attrs):
    try:
        return vals[0] + vals[1]
    except ValueError:
        raise ShapeError(f"add {vals[0].shape} + {vals[1].shape}") from None


def _fwd_concat(vals, attrs):
    axis = attrs["axis"]
    other = [s for i, s in enumerate(vals[0].shape) if i != axis % vals[0].ndim]
    for v in vals[1:]:
        if v.ndim != vals[0].ndim or [s for i, s in enumerate(v.shape) if i != axis % v.ndim] != other:
            raise ShapeError(f"concat of {[x.shape for x in vals]} on axis {axis}")
    return np.concatenate(vals, axis=axis)


def _fwd_softmax(vals, attrs):
    x = vals[0]
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def _fwd_sum(vals, attrs):
    axis = attrs.get("axis")
    if axis is None:
        return np.array([[vals[0].sum()]])
    return vals[0].sum(axis=axis, keepdims=True)


def _fwd_mul(vals, attrs):
    try:
        return vals[0] * vals[1]
    except ValueError:
        raise ShapeError(f"mul_elementwise {vals[0].shape} * {vals[1].shape}") from None


def _fwd_bce(vals, attrs):
    z = vals[0]
    y = attrs["labels"]
    if y.shape != z.shape:
        raise ShapeError(f"bce logits {z.shape} vs labels {y.shape}")
    zc = np.clip(z, -LOGIT_CLAMP, LOGIT_CLAMP)
    return np.maximum(zc, 0.0) - y * zc + np.log1p(np.exp(-np.abs(zc)))


def _fwd_lookup(vals, attrs):
    table = vals[0]
    ids = attrs["ids"]
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embedding_lookup id out of range for table {table.shape}")
    return table[ids]


# --- backward rules: (grad_out, vals, out, attrs) -> list of input grads ----
# Binary rules also take ``needs`` and return None for inputs without grad.

def _bwd_matmul(g, vals, out, attrs, needs=(True, True)):
    a, b = vals
    if attrs.get("transpose_b"):
        return [g @ b if needs[0] else None, g.T @ a if needs[1] else None]
    return [g @ b.T if needs[0] else None, a.T @ g if needs[1] else None]


def _bwd_add(g, vals, out, attrs, needs=(True, True)):
    return [_unbroadcast(g, v.shape) if n else None for v, n in zip(vals, needs)]


def _bwd_concat(g, vals, out, attrs):
    axis = attrs["axis"]
    cuts = np.cumsum([v.shape[axis] for v in vals])[:-1]
    return np.split(g, cuts, axis=axis)


def _bwd_softmax(g, vals, out, attrs):
    return [out * (g - (g * out).sum(axis=-1, keepdims=True))]


def _bwd_mean_rows(g, vals, out, attrs):
    n = vals[0].shape[0]
    return [np.broadcast_to(g / n, vals[0].shape).copy()]


def _bwd_sum(g, vals, out, attrs):
    return [np.broadcast_to(g, vals[0].shape).copy()]


def _bwd_mul(g, vals, out, attrs, needs=(True, True)):
    a, b = vals
    return [_unbroadcast(g * b, a.shape) if needs[0] else None,
            _unbroadcast(g * a, b.shape) if needs[1] else None]


def _bwd_bce(g, vals, out, attrs):
    z = vals[0]
    inside = np.abs(z) <= LOGIT_CLAMP
    return [g * (_sigmoid(z) - attrs["labels"]) * inside]


def _bwd_lookup(g, vals, out, attrs):
    grad = np.zeros_like(vals[0])
    np.add.at(grad, attrs["ids"], g)
    return [grad]


FORWARD: dict[str, Callable] = {
    "matmul": _fwd_matmul,
    "add": _fwd_add,
    "concat": _fwd_concat,
    "relu": lambda v, a: np.maximum(v[0], 0.0),
    "sigmoid": lambda v, a: _sigmoid(v[0]),
    "softmax": _fwd_softmax,
    "mean_rows": lambda v, a: v[0].mean(axis=0, keepdims=True),
    "sum": _fwd_sum,
    "scale": lambda v, a: a["factor"] * v[0],
    "log": lambda v, a: np.log(v[0]),
    "exp": lambda v, a: np.exp(v[0]),
    "mul_elementwise": _fwd_mul,
    "bce": _fwd_bce,
    "embedding_lookup": _fwd_lookup,
}

BACKWARD: dict[str, Callable] = {
    "matmul": _bwd_matmul,
    "add": _bwd_add,
    "concat": _bwd_concat,
    "relu": lambda g, v, o, a: [g * (v[0] > 0)],
    "sigmoid": lambda g, v, o, a: [g * o * (1.0 - o)],
    "softmax": _bwd_softmax,
    "mean_rows": _bwd_mean_rows,
    "sum": _bwd_sum,
    "scale": lambda g, v, o, a: [a["factor"] * g],
    "log": lambda g, v, o, a: [g / v[0]],
    "exp": lambda g, v, o, a: [g * o],
    "mul_elementwise": _bwd_mul,
    "bce": _bwd_bce,
    "embedding_lookup": _bwd_lookup,
}


_MASKED = frozenset({"matmul", "add", "mul_elementwise"})


def _as_matrix(array):
    arr = np.asarray(array, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    return arr


class Graph:
    """A tape of nodes in creation (hence topological) order."""

    def __init__(self):
        self.nodes: list[Node] = []
        self._params: dict[str, Node] = {}

    # leaves

    def param(self, name, array, trainable=True):
        """Parameter leaf aliasing ``array`` (no copy), cached by name."""
        if name in self._params:
            return self._params[name]
        if not isinstance(array, np.ndarray) or array.dtype != np.float64:
            raise TypeError(f"parameter {name!r} must be a float64 ndarray")
        node = Node(len(self.nodes), "param", (), {}, array, name=name,
                    requires_grad=trainable)
        self.nodes.append(node)
        self._params[name] = node
        return node

    def const(self, array):
        node = Node(len(self.nodes), "const", (), {}, _as_matrix(array))
        self.nodes.append(node)
        return node

    @property
    def params(self):
        return dict(self._params)

    # ops

    def _apply(self, op, inputs, **attrs):
        node_id = len(self.nodes)
        vals = [x.value for x in inputs]
        try:
            value = FORWARD[op](vals, attrs)
        except GraphError as err:
            raise type(err)(str(err), node_id) from None
        if not np.isfinite(value).all():
            raise NonFiniteError(f"non-finite output of {op}", node_id)
        node = Node(node_id, op, tuple(inputs), attrs, value,
                    requires_grad=any(x.requires_grad for x in inputs))
        self.nodes.append(node)
        return node

    def matmul(self, a, b, transpose_b=False):
        return self._apply("matmul", (a, b), transpose_b=transpose_b)

    def add(self, a, b):
        return self._apply("add", (a, b))

    def concat(self, xs: Sequence[Node], axis=1):
        return self._apply("concat", tuple(xs), axis=axis)

    def relu(self, x):
        return self._apply("relu", (x,))

    def sigmoid(self, x):
        return self._apply("sigmoid", (x,))

    def softmax(self, x):
        return self._apply("softmax", (x,))

    def mean_rows(self, x):
        return self._apply("mean_rows", (x,))

    def sum(self, x, axis=None):
        return self._apply("sum", (x,), axis=axis)

    def scale(self, x, factor):
        return self._apply("scale", (x,), factor=float(factor))

    def log(self, x):
        return self._apply("log", (x,))

    def exp(self, x):
        return self._apply("exp", (x,))

    def mul(self, a, b):
        return self._apply("mul_elementwise", (a, b))

    def bce(self, logits, labels):
        """Fused sigmoid + binary cross-entropy, elementwise."""
        labels = np.asarray(labels, dtype=np.float64).reshape(logits.value.shape)
        return self._apply("bce", (logits,), labels=labels)

    def embedding_lookup(self, table, ids):
        return self._apply("embedding_lookup", (table,), ids=np.asarray(ids, dtype=np.int64))

    # conveniences built from catalog ops

    def sub(self, a, b):
        return self.add(a, self.scale(b, -1.0))

    def linear(self, x, w, b=None):
        out = self.matmul(x, w)
        return out if b is None else self.add(out, b)

    # execution

    def forward(self, outputs: Iterable[Node] | None = None):
        """Recompute every non-leaf node from current leaf values.

        Returns the values of ``outputs`` (all nodes if omitted).
        """
        self._recompute(n for n in self.nodes if n.op not in ("param", "const"))
        targets = self.nodes if outputs is None else list(outputs)
        return [n.value for n in targets]

    def _recompute(self, nodes):
        for node in nodes:
            vals = [x.value for x in node.inputs]
            try:
                value = FORWARD[node.op](vals, node.attrs)
            except GraphError as err:
                raise type(err)(str(err), node.id) from None
            if not np.isfinite(value).all():
                raise NonFiniteError(f"non-finite output of {node.op}", node.id)
            node.value = value

    def downstream(self, leaf: Node, upto: Node):
        """Non-leaf nodes up to ``upto`` whose value depends on ``leaf``, in order."""
        hit = {leaf.id}
        out = []
        for node in self.nodes[leaf.id + 1: upto.id + 1]:
            if any(x.id in hit for x in node.inputs):
                hit.add(node.id)
                out.append(node)
        return out

    def backward(self, loss: Node):
        """Accumulate d(loss)/d(param) for every parameter leaf.

        Returns ``{name: grad}``; non-trainable parameters get zeros.
        """
        if loss.value.size != 1:
            raise ShapeError(f"loss must be scalar, got shape {loss.value.shape}", loss.id)
        for node in self.nodes:
            node.grad = None
        loss.grad = np.ones_like(loss.value)
        for node in reversed(self.nodes[: loss.id + 1]):
            if node.grad is None or not node.inputs or not node.requires_grad:
                continue
            vals = [x.value for x in node.inputs]
            rule = BACKWARD[node.op]
            if node.op in _MASKED:
                needs = tuple(x.requires_grad for x in node.inputs)
                grads = rule(node.grad, vals, node.value, node.attrs, needs)
            else:
                grads = rule(node.grad, vals, node.value, node.attrs)
            for inp, g in zip(node.inputs, grads):
                if not inp.requires_grad:
                    continue
                inp.grad = g if inp.grad is None else inp.grad + g
        out = {}
        for name, node in self._params.items():
            out[name] = node.grad if node.grad is not None else np.zeros_like(node.value)
        return out


def forward(graph: Graph, outputs):
    return graph.forward(outputs)


def backward(graph: Graph, loss_node: Node):
    return graph.backward(loss_node)


def grad_check(loss_fn: Callable[[], tuple[Graph, Node]], params=None, eps=1e-5):
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn`` builds a graph and returns ``(graph, loss_node)``. Parameter
    arrays are perturbed in place and the same graph is re-evaluated, so any
    value computed at build time (e.g. a kernel bandwidth) stays constant.
    ``params`` optionally restricts the check to the named parameters.
    Error per coordinate is ``|analytic - numeric| / max(1, |analytic|)``.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    graph, loss = loss_fn()
    analytic = graph.backward(loss)
    nodes = graph.params
    names = list(nodes) if params is None else list(params)
    worst = 0.0
    for name in names:
        node = nodes[name]
        if not node.requires_grad:
            continue
        # only nodes fed by this parameter need re-evaluation
        affected = graph.downstream(node, loss)
        flat = node.value.reshape(-1)
        grad = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            graph._recompute(affected)
            plus = loss.value.item()
            flat[i] = orig - eps
            graph._recompute(affected)
            minus = loss.value.item()
            flat[i] = orig
            numeric = (plus - minus) / (2.0 * eps)
            err = abs(grad[i] - numeric) / max(1.0, abs(grad[i]))
            worst = max(worst, err)
        # leave no stale values behind for the next parameter
        graph._recompute(affected)
    return worst
