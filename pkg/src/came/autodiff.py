"""Reverse-mode automatic differentiation over float64 numpy arrays.

Every operation builds a Node holding the forward value; backward() walks the
graph in reverse topological order and accumulates vector-Jacobian products.
Double precision throughout: gradient checking and bit-reproducibility matter
more than raw speed at this scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Additive mask value. exp(BIG_NEG - anything reasonable) underflows to an
# exact 0.0, which is what makes PAD positions drop out of softmax entirely.
BIG_NEG = -1e30


class ShapeMismatchError(ValueError):
    pass


class UnknownOperationError(ValueError):
    pass


class NonFiniteLossError(FloatingPointError):
    pass


class Node:
    """One vertex of the compute graph.

    Holds the operation tag, parent references, the cached forward value and
    a gradient buffer of the same shape (zero until backward() writes to it).
    """

    __slots__ = ("op", "value", "grad", "parents", "vjp", "requires_grad")

    def __init__(self, op, value, parents=(), vjp=None, requires_grad=None):
        self.op = op
        self.value = value
        self.parents = parents
        self.vjp = vjp
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in parents)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(value) if requires_grad else None

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.value.shape})"


def param(array) -> Node:
    """Wrap an array as a trainable leaf."""
    return Node("param", np.asarray(array, dtype=np.float64), requires_grad=True)


def const(array) -> Node:
    """Wrap an array as a non-trainable leaf."""
    return Node("const", np.asarray(array, dtype=np.float64), requires_grad=False)


def as_node(x) -> Node:
    return x if isinstance(x, Node) else const(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# Elementwise and arithmetic ops
# ---------------------------------------------------------------------------


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    try:
        value = a.value + b.value
    except ValueError:
        raise ShapeMismatchError(f"add: shapes {a.shape} and {b.shape} do not broadcast")

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Node("add", value, (a, b), vjp)


def sub(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    try:
        value = a.value - b.value
    except ValueError:
        raise ShapeMismatchError(f"sub: shapes {a.shape} and {b.shape} do not broadcast")

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Node("sub", value, (a, b), vjp)


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    try:
        value = a.value * b.value
    except ValueError:
        raise ShapeMismatchError(f"mul: shapes {a.shape} and {b.shape} do not broadcast")

    def vjp(g):
        return _unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)

    return Node("mul", value, (a, b), vjp)


def scale(a, c: float) -> Node:
    a = as_node(a)
    c = float(c)
    return Node("scale", a.value * c, (a,), lambda g: (g * c,))


def neg(a) -> Node:
    return scale(a, -1.0)


def matmul(a, b) -> Node:
    """Matrix product. Supports 1-D x 1-D (dot) and stacked >=2-D operands."""
    a, b = as_node(a), as_node(b)
    av, bv = a.value, b.value
    if av.ndim == 1 and bv.ndim == 1:
        if av.shape[0] != bv.shape[0]:
            raise ShapeMismatchError(f"matmul: shapes {a.shape} and {b.shape} misaligned")
        value = av @ bv

        def vjp(g):
            return g * bv, g * av

        return Node("matmul", np.asarray(value), (a, b), vjp)
    if av.ndim < 2 or bv.ndim < 2:
        raise ShapeMismatchError(f"matmul: shapes {a.shape} and {b.shape} unsupported")
    if av.shape[-1] != bv.shape[-2]:
        raise ShapeMismatchError(f"matmul: shapes {a.shape} and {b.shape} misaligned")
    value = av @ bv

    def vjp(g):
        ga = _unbroadcast(g @ bv.swapaxes(-1, -2), a.shape)
        gb = _unbroadcast(av.swapaxes(-1, -2) @ g, b.shape)
        return ga, gb

    return Node("matmul", value, (a, b), vjp)


def transpose(a, axes=None) -> Node:
    a = as_node(a)
    value = np.transpose(a.value, axes)
    inv = None if axes is None else np.argsort(axes)

    def vjp(g):
        return (np.transpose(g, inv),)

    return Node("transpose", value, (a,), vjp)


def reshape(a, shape) -> Node:
    a = as_node(a)
    value = np.reshape(a.value, shape)

    def vjp(g):
        return (np.reshape(g, a.shape),)

    return Node("reshape", value, (a,), vjp)


def relu(a) -> Node:
    a = as_node(a)
    mask = a.value > 0
    return Node("relu", np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a) -> Node:
    """tanh-form Gaussian error linear unit."""
    a = as_node(a)
    x = a.value
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    value = 0.5 * x * (1.0 + t)

    def vjp(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        dx = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * dinner
        return (g * dx,)

    return Node("gelu", value, (a,), vjp)


def log(a) -> Node:
    a = as_node(a)
    value = np.log(a.value)
    return Node("log", value, (a,), lambda g: (g / a.value,))


def exp(a) -> Node:
    a = as_node(a)
    value = np.exp(a.value)
    return Node("exp", value, (a,), lambda g: (g * value,))


# ---------------------------------------------------------------------------
# Reductions and normalizations
# ---------------------------------------------------------------------------


def softmax(a, axis: int = -1) -> Node:
    a = as_node(a)
    shifted = a.value - np.max(a.value, axis=axis, keepdims=True)
    e = np.exp(shifted)
    value = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        inner = (g * value).sum(axis=axis, keepdims=True)
        return (value * (g - inner),)

    return Node("softmax", value, (a,), vjp)


def log_softmax(a, axis: int = -1) -> Node:
    a = as_node(a)
    shifted = a.value - np.max(a.value, axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    value = shifted - lse
    sm = np.exp(value)

    def vjp(g):
        return (g - sm * g.sum(axis=axis, keepdims=True),)

    return Node("log_softmax", value, (a,), vjp)


def max_axis(a, axis: int) -> Node:
    """Max over one axis. Ties route the gradient to the first maximal index."""
    a = as_node(a)
    value = np.max(a.value, axis=axis)
    idx = np.argmax(a.value, axis=axis)

    def vjp(g):
        out = np.zeros_like(a.value)
        np.put_along_axis(
            out, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis
        )
        return (out,)

    return Node("max", value, (a,), vjp)


def sum_axis(a, axis=None, keepdims: bool = False) -> Node:
    a = as_node(a)
    value = np.sum(a.value, axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).copy(),)

    return Node("sum", value, (a,), vjp)


def mean_axis(a, axis: int, keepdims: bool = False) -> Node:
    a = as_node(a)
    n = a.value.shape[axis]
    value = np.mean(a.value, axis=axis, keepdims=keepdims)

    def vjp(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg / n, a.shape).copy(),)

    return Node("mean", value, (a,), vjp)


def layer_norm(x, gamma, beta, eps: float = 1e-12) -> Node:
    """Normalize over the last axis, then apply learned gain and bias."""
    x, gamma, beta = as_node(x), as_node(gamma), as_node(beta)
    mu = x.value.mean(axis=-1, keepdims=True)
    var = x.value.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.value - mu) * inv
    value = gamma.value * xhat + beta.value

    def vjp(g):
        gg = g * gamma.value
        gx = inv * (
            gg
            - gg.mean(axis=-1, keepdims=True)
            - xhat * (gg * xhat).mean(axis=-1, keepdims=True)
        )
        ggamma = _unbroadcast(g * xhat, gamma.shape)
        gbeta = _unbroadcast(g, beta.shape)
        return gx, ggamma, gbeta

    return Node("layer_norm", value, (x, gamma, beta), vjp)


# ---------------------------------------------------------------------------
# Indexing ops
# ---------------------------------------------------------------------------


def embedding(table, ids) -> Node:
    """Row lookup into `table` by an integer id array."""
    table = as_node(table)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and ids.max() >= table.shape[0]:
        raise ShapeMismatchError(
            f"embedding: id {int(ids.max())} out of range for table {table.shape}"
        )
    value = table.value[ids]

    def vjp(g):
        gt = np.zeros_like(table.value)
        np.add.at(gt, ids, g)
        return (gt,)

    return Node("embedding", value, (table,), vjp)


def take(a, indices, axis: int = 0) -> Node:
    """Gather along one axis; repeated indices accumulate on backward."""
    a = as_node(a)
    indices = np.asarray(indices, dtype=np.int64)
    value = np.take(a.value, indices, axis=axis)

    def vjp(g):
        out = np.zeros_like(a.value)
        out_m = np.moveaxis(out, axis, 0)
        np.add.at(out_m, indices, np.moveaxis(g, axis, 0))
        return (out,)

    return Node("take", value, (a,), vjp)


# ---------------------------------------------------------------------------
# Fused scaled dot-product attention (the only fused composite)
# ---------------------------------------------------------------------------


def attention(q, k, v, n_heads: int, mask_bias=None) -> Node:
    """Multi-head scaled dot-product attention over (B, L, d) inputs.

    `mask_bias` is an additive constant of shape broadcastable to
    (B, n_heads, L, L); masked key positions should carry BIG_NEG so their
    softmax weight underflows to exactly zero. Fused into one node for
    numerical stability and a smaller graph; its gradient is derived
    analytically and finite-difference checked as a unit.
    """
    q, k, v = as_node(q), as_node(k), as_node(v)
    if q.shape != k.shape or q.shape != v.shape or q.value.ndim != 3:
        raise ShapeMismatchError(
            f"attention: expected matching (B, L, d), got {q.shape}, {k.shape}, {v.shape}"
        )
    B, L, d = q.shape
    if d % n_heads:
        raise ShapeMismatchError(f"attention: width {d} not divisible by {n_heads} heads")
    dh = d // n_heads
    rs = 1.0 / math.sqrt(dh)

    def split(x):  # (B, L, d) -> (B, H, L, dh)
        return x.reshape(B, L, n_heads, dh).transpose(0, 2, 1, 3)

    qh, kh, vh = split(q.value), split(k.value), split(v.value)
    scores = qh @ kh.swapaxes(-1, -2) * rs
    if mask_bias is not None:
        scores = scores + mask_bias
    scores -= scores.max(axis=-1, keepdims=True)
    w = np.exp(scores)
    w /= w.sum(axis=-1, keepdims=True)
    out = (w @ vh).transpose(0, 2, 1, 3).reshape(B, L, d)

    def vjp(g):
        gh = g.reshape(B, L, n_heads, dh).transpose(0, 2, 1, 3)
        gv = w.swapaxes(-1, -2) @ gh
        gw = gh @ vh.swapaxes(-1, -2)
        gs = w * (gw - (gw * w).sum(axis=-1, keepdims=True))
        gq = (gs @ kh) * rs
        gk = (gs.swapaxes(-1, -2) @ qh) * rs

        def merge(x):  # (B, H, L, dh) -> (B, L, d)
            return x.transpose(0, 2, 1, 3).reshape(B, L, d)

        return merge(gq), merge(gk), merge(gv)

    return Node("attention", out, (q, k, v), vjp)


# ---------------------------------------------------------------------------
# Graph traversal
# ---------------------------------------------------------------------------


def _topo_order(root: Node) -> list[Node]:
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def backward(root: Node) -> dict:
    """Accumulate d(root)/d(leaf) into every grad-requiring node's .grad.

    Returns a map from leaf parameter Node to this call's gradient array.
    Repeated calls without zeroing .grad add up.
    """
    if root.value.shape != ():
        raise ShapeMismatchError(f"backward: root must be scalar, got shape {root.shape}")
    order = _topo_order(root)
    gtable = {id(root): np.ones((), dtype=np.float64)}
    # vjps may return views or their own input; only buffers we allocated
    # ourselves ("owned") are safe to accumulate into in place.
    owned: set[int] = set()
    leaf_grads: dict[Node, np.ndarray] = {}
    for node in reversed(order):
        g = gtable.pop(id(node), None)
        if g is None or not node.requires_grad:
            continue
        node.grad += g
        if node.op == "param":
            leaf_grads[node] = g
        if node.vjp is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            pid = id(parent)
            if pid not in gtable:
                gtable[pid] = pg
            elif pid in owned:
                gtable[pid] += pg
            else:
                gtable[pid] = gtable[pid] + pg
                owned.add(pid)
    return leaf_grads


# ---------------------------------------------------------------------------
# Op registry
# ---------------------------------------------------------------------------

OPS = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "scale": scale,
    "neg": neg,
    "matmul": matmul,
    "transpose": transpose,
    "reshape": reshape,
    "relu": relu,
    "gelu": gelu,
    "log": log,
    "exp": exp,
    "softmax": softmax,
    "log_softmax": log_softmax,
    "max": max_axis,
    "sum": sum_axis,
    "mean": mean_axis,
    "layer_norm": layer_norm,
    "embedding": embedding,
    "take": take,
    "attention": attention,
}


def forward_op(tag: str, *inputs, **kwargs) -> Node:
    """Build a node by operation tag; the dispatch surface for the op set."""
    try:
        fn = OPS[tag]
    except KeyError:
        raise UnknownOperationError(f"unknown operation tag {tag!r}") from None
    return fn(*inputs, **kwargs)


# ---------------------------------------------------------------------------
# Finite-difference gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    worst_param: str = ""

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return f"grad_check {status}: max_rel_err={self.max_rel_err:.3e} at {self.worst_param!r}"


def grad_check(loss_builder, params: dict, h: float = 1e-5, tol: float = 1e-3) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    `loss_builder` maps {name: leaf Node} to a scalar Node and must be
    deterministic; `params` maps names to float64 arrays that are perturbed
    in place (and restored) to estimate (f(x+h) - f(x-h)) / 2h per element.
    Relative error uses denominator max(|analytic|, |numeric|, 1e-8).
    """
    if h <= 0:
        raise ValueError("grad_check: h must be positive")
    leaves = {name: param(arr) for name, arr in params.items()}
    root = loss_builder(leaves)
    if not np.isfinite(root.value):
        raise NonFiniteLossError(f"loss is not finite: {root.value!r}")
    backward(root)
    analytic = {name: leaves[name].grad.copy() for name in params}

    def loss_at() -> float:
        node = loss_builder({name: const(arr) for name, arr in params.items()})
        if not np.isfinite(node.value):
            raise NonFiniteLossError(f"loss is not finite: {node.value!r}")
        return float(node.value)

    max_rel, worst = 0.0, ""
    for name, arr in params.items():
        flat = arr.reshape(-1)
        grad_flat = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = loss_at()
            flat[i] = orig - h
            fm = loss_at()
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * h)
            rel = abs(grad_flat[i] - numeric) / max(abs(grad_flat[i]), abs(numeric), 1e-8)
            if rel > max_rel:
                max_rel, worst = rel, f"{name}[{i}]"
    return GradCheckReport(max_rel_err=max_rel, passed=max_rel <= tol, worst_param=worst)
