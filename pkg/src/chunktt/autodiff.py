"""Small dense-tensor engine with reverse-mode differentiation.

Every tensor holds a float64 numpy array.  Ops build the graph eagerly: each
output remembers its inputs and a closure that maps the output gradient to
input gradients.  Node ids come from a global counter, so sorting reachable
nodes by id gives a valid topological order.

Broadcasting is deliberately narrow: binary elementwise ops accept either two
equal shapes or a matrix with a vector applied per row.  Anything else needs
an explicit reshape.
"""

from __future__ import annotations

import contextlib
import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "DimensionError",
    "NonFiniteError",
    "Tensor",
    "Graph",
    "tensor",
    "parameter",
    "constant",
    "no_grad",
    "set_debug",
    "matmul",
    "add",
    "sub",
    "mul",
    "neg",
    "scale",
    "sigmoid",
    "tanh",
    "relu",
    "exp",
    "embedding",
    "layer_norm",
    "log_softmax",
    "softmax",
    "masked_softmax",
    "sum",
    "mean",
    "slice",
    "concat",
    "reshape",
    "transpose",
    "outer_add",
    "trace",
    "backward",
    "grad_check",
]

_ids = itertools.count()
_grad_enabled = True
_debug = True


class DimensionError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def set_debug(flag: bool) -> None:
    """Toggle eager NaN/Inf detection at op boundaries."""
    global _debug
    _debug = bool(flag)


@contextlib.contextmanager
def no_grad():
    """Run ops without recording the graph (inference)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "trainable", "parents", "backward_fn", "op", "id", "name")

    def __init__(self, data, requires_grad=False, op="leaf", parents=(), backward_fn=None, name=None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.trainable = requires_grad and op == "leaf"
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op
        self.id = next(_ids)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def values(self) -> np.ndarray:
        """Flat row-major view of the data."""
        return self.data.reshape(-1)

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, op={self.op})"

    def __add__(self, other):
        return add(self, _wrap(other, self))

    def __radd__(self, other):
        return add(_wrap(other, self), self)

    def __sub__(self, other):
        return sub(self, _wrap(other, self))

    def __rsub__(self, other):
        return sub(_wrap(other, self), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _wrap(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.broadcast_to(np.asarray(x, dtype=np.float64), like.shape).copy())


def tensor(data, requires_grad=False, name=None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=requires_grad, name=name)


def parameter(data, name=None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def constant(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64))


def _check(out: np.ndarray, op: str) -> None:
    if _debug and not np.isfinite(out).all():
        raise NonFiniteError(f"non-finite value produced by {op}")


def _make(out: np.ndarray, op: str, parents: Sequence[Tensor], backward_fn) -> Tensor:
    _check(out, op)
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(out, op=op)
    return Tensor(out, requires_grad=True, op=op, parents=tuple(parents), backward_fn=backward_fn)


def _row_broadcast(a: Tensor, b: Tensor, op: str) -> bool:
    """True if b is applied per row of a, False for equal shapes."""
    if a.shape == b.shape:
        return False
    if b.data.ndim == 1 and a.shape[-1] == b.shape[0]:
        return True
    raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_rows(g: np.ndarray, shape) -> np.ndarray:
    return g.reshape(-1, shape[0]).sum(axis=0)


# ---------------------------------------------------------------- elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    bc = _row_broadcast(a, b, "add")

    def bw(g):
        return g, (_reduce_rows(g, b.shape) if bc else g)

    return _make(a.data + b.data, "add", (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    bc = _row_broadcast(a, b, "sub")

    def bw(g):
        return g, -(_reduce_rows(g, b.shape) if bc else g)

    return _make(a.data - b.data, "sub", (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    bc = _row_broadcast(a, b, "mul")

    def bw(g):
        ga = g * b.data
        gb = g * a.data
        return ga, (_reduce_rows(gb, b.shape) if bc else gb)

    return _make(a.data * b.data, "mul", (a, b), bw)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, "neg", (a,), lambda g: (-g,))


def scale(a: Tensor, c: float) -> Tensor:
    return _make(a.data * c, "scale", (a,), lambda g: (g * c,))


def sigmoid(a: Tensor) -> Tensor:
    # split by sign so exp never overflows
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _make(out, "sigmoid", (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, "tanh", (a,), lambda g: (g * (1.0 - out * out),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(a.data * mask, "relu", (a,), lambda g: (g * mask,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, "exp", (a,), lambda g: (g * out,))


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; leading batch dims must agree exactly."""
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def bw(g):
        return g @ np.swapaxes(b.data, -1, -2), np.swapaxes(a.data, -1, -2) @ g

    return _make(a.data @ b.data, "matmul", (a, b), bw)


def embedding(table: Tensor, ids) -> Tensor:
    """Gather rows of ``table``."""
    idx = np.asarray(ids, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(f"embedding id out of range for table with {table.shape[0]} rows")

    def bw(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return _make(table.data[idx], "embedding", (table,), bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    n = x.shape[-1]
    if gain.shape != (n,) or bias.shape != (n,):
        raise DimensionError(f"layer_norm: gain {gain.shape} / bias {bias.shape} vs last dim {n}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def bw(g):
        gx_hat = g * gain.data
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True) - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        return gx, _reduce_rows(g * xhat, (n,)), _reduce_rows(g, (n,))

    return _make(out, "layer_norm", (x, gain, bias), bw)


def log_softmax(x: Tensor) -> Tensor:
    """Log-softmax over the last axis, stabilised by max subtraction."""
    if x.shape[-1] < 1:
        raise DimensionError("log_softmax: empty last axis")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))

    def bw(g):
        return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)

    return _make(out, "log_softmax", (x,), bw)


def softmax(x: Tensor) -> Tensor:
    z = np.exp(x.data - x.data.max(axis=-1, keepdims=True))
    out = z / z.sum(axis=-1, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _make(out, "softmax", (x,), bw)


def masked_softmax(x: Tensor, mask: np.ndarray) -> Tensor:
    """Softmax over the last axis restricted to ``mask`` entries.

    ``mask`` is boolean and matches the trailing dims of ``x``; masked-out
    entries get exactly zero weight.  Every row needs at least one True.
    """
    mask = np.asarray(mask, dtype=bool)
    if x.shape[-mask.ndim:] != mask.shape:
        raise DimensionError(f"masked_softmax: mask {mask.shape} vs scores {x.shape}")
    filled = np.where(mask, x.data, -np.inf)
    z = np.exp(filled - filled.max(axis=-1, keepdims=True))
    out = z / z.sum(axis=-1, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _make(out, "masked_softmax", (x,), bw)


# ---------------------------------------------------------------- shape / reduction


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    return _make(np.array([x.data.sum()]), "sum", (x,), lambda g: (np.full(x.shape, g[0]),))


def mean(x: Tensor) -> Tensor:
    n = x.size
    return _make(np.array([x.data.sum() / n]), "mean", (x,), lambda g: (np.full(x.shape, g[0] / n),))


def slice(x: Tensor, start: int, stop: int, axis: int = 0) -> Tensor:  # noqa: A001
    ax = axis % x.data.ndim
    index = (np.s_[:],) * ax + (np.s_[start:stop],)

    def bw(g):
        gx = np.zeros_like(x.data)
        gx[index] = g
        return (gx,)

    return _make(x.data[index].copy(), "slice", (x,), bw)


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = list(xs)
    ax = axis % xs[0].data.ndim
    bounds = np.cumsum([0] + [t.shape[ax] for t in xs])

    def bw(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(xs)))

    return _make(np.concatenate([t.data for t in xs], axis=ax), "concat", xs, bw)


def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    out = x.data.reshape(shape)
    return _make(out.copy(), "reshape", (x,), lambda g: (g.reshape(src),))


def transpose(x: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(x.data.ndim))) if axes is None else tuple(axes)
    inv = np.argsort(axes)
    return _make(np.ascontiguousarray(x.data.transpose(axes)), "transpose", (x,), lambda g: (g.transpose(inv),))


def outer_add(a: Tensor, b: Tensor) -> Tensor:
    """out[i, j, :] = a[i, :] + b[j, :] for a (m, k) and b (n, k)."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[1]:
        raise DimensionError(f"outer_add: incompatible shapes {a.shape} and {b.shape}")

    def bw(g):
        return g.sum(axis=1), g.sum(axis=0)

    return _make(a.data[:, None, :] + b.data[None, :, :], "outer_add", (a, b), bw)


# ---------------------------------------------------------------- backward


@dataclass
class Graph:
    """Nodes reachable from a root, in topological (creation) order."""

    nodes: list[Tensor] = field(default_factory=list)

    def index(self) -> dict[int, int]:
        return {t.id: k for k, t in enumerate(self.nodes)}

    def leaves(self) -> list[Tensor]:
        return [t for t in self.nodes if t.trainable]


def trace(root: Tensor) -> Graph:
    seen: set[int] = set()
    nodes: list[Tensor] = []
    stack = [root]
    while stack:
        t = stack.pop()
        if t.id in seen:
            continue
        seen.add(t.id)
        nodes.append(t)
        stack.extend(p for p in t.parents if p.requires_grad)
    nodes.sort(key=lambda t: t.id)
    return Graph(nodes)


def backward(loss: Tensor, params: Iterable[Tensor] = ()) -> Graph:
    """Populate ``.grad`` on every trainable leaf reachable from ``loss``.

    Leaves listed in ``params`` that are not reachable get a zero gradient.
    Gradients accumulate into existing ``.grad`` arrays.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    graph = trace(loss)
    grads: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        g = grads.pop(node.id, None)
        if g is None:
            continue
        if node.trainable:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        if node.backward_fn is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent.id in grads:
                grads[parent.id] = grads[parent.id] + pg
            else:
                grads[parent.id] = pg
    for p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
    return graph


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
    floor: float = 1e-3,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``f`` rebuilds the scalar loss from the current parameter values.  The
    relative error of one entry is ``|a - n| / max(|a|, |n|, floor)``; the
    floor keeps entries with a near-zero true derivative from dominating.
    ``max_entries`` samples that many coordinates per parameter.
    """
    for p in params:
        p.grad = None
    backward(f(), params)
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    with no_grad():
        for p, a in zip(params, analytic):
            flat = p.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                idx = (rng or np.random.default_rng(0)).choice(flat.size, max_entries, replace=False)
            for i in idx:
                orig = flat[i]
                flat[i] = orig + h
                fp = f().data[0]
                flat[i] = orig - h
                fm = f().data[0]
                flat[i] = orig
                num = (fp - fm) / (2 * h)
                an = a.reshape(-1)[i]
                err = abs(an - num) / max(abs(an), abs(num), floor)
                worst = max(worst, err)
    return worst
