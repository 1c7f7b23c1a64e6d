"""A small dense reverse-mode autodiff engine on top of numpy.

Every operation returns a new :class:`Tensor`; when any input requires a
gradient the result remembers its parents and a closure mapping the upstream
gradient to per-parent gradients. :func:`backward` walks that dynamic tape in
reverse topological order, summing contributions for tensors used more than
once, and frees the tape afterwards.

Everything is float64. Any operation producing NaN or Inf raises
:class:`~prodnet.errors.NumericError`.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import NumericError, ShapeError

__all__ = [
    "Tensor",
    "tensor",
    "parameter",
    "matmul",
    "add",
    "sub",
    "mul",
    "neg",
    "concat",
    "take",
    "reshape",
    "expand",
    "tsum",
    "mean",
    "sigmoid",
    "tanh",
    "leaky_relu",
    "elu",
    "exp",
    "log",
    "clip",
    "segment_softmax",
    "backward",
    "grad_check",
]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return _getitem(self, idx)


def tensor(data) -> Tensor:
    return data if isinstance(data, Tensor) else Tensor(data)


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def _check_finite(values: np.ndarray, op: str) -> None:
    if not np.isfinite(values).all():
        raise NumericError(f"non-finite value produced by {op}")


def _make(values: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    _check_finite(values, op)
    out = Tensor(values, op=op)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# -- binary elementwise ------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    _broadcast_shape(a, b, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    _broadcast_shape(a, b, "sub")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    _broadcast_shape(a, b, "mul")

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), bw, "mul")


def neg(a) -> Tensor:
    a = tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def matmul(a, b) -> Tensor:
    """Matrix product with numpy semantics (batched leading axes, 1-D operands)."""
    a, b = tensor(a), tensor(b)
    if a.ndim == 0 or b.ndim == 0:
        raise ShapeError(f"matmul: scalar operand, shapes {a.shape} and {b.shape}")
    try:
        values = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def bw(g):
        A = a.data[None, :] if a.ndim == 1 else a.data
        B = b.data[:, None] if b.ndim == 1 else b.data
        G = g
        if a.ndim == 1:
            G = np.expand_dims(G, -2)
        if b.ndim == 1:
            G = np.expand_dims(G, -1)
        gA = _unbroadcast(G @ np.swapaxes(B, -1, -2), A.shape)
        gB = _unbroadcast(np.swapaxes(A, -1, -2) @ G, B.shape)
        return gA.reshape(a.shape), gB.reshape(b.shape)

    return _make(values, (a, b), bw, "matmul")


# -- structural ----------------------------------------------------------------

def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [tensor(t) for t in tensors]
    try:
        values = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]}") from None
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def bw(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _make(values, ts, bw, "concat")


def _getitem(a: Tensor, idx) -> Tensor:
    values = a.data[idx]

    basic = all(isinstance(k, (int, slice)) or k is Ellipsis for k in (idx if isinstance(idx, tuple) else (idx,)))

    def bw(g):
        out = np.zeros_like(a.data)
        if basic:
            out[idx] = g
        else:
            np.add.at(out, idx, g)
        return (out,)

    return _make(np.array(values, dtype=np.float64), (a,), bw, "slice")


def take(a, indices, axis: int = -1) -> Tensor:
    """Gather along one axis; repeated indices accumulate in the backward pass."""
    a = tensor(a)
    indices = np.asarray(indices, dtype=np.int64)
    axis = axis % a.ndim
    values = np.take(a.data, indices, axis=axis)

    def bw(g):
        out = np.zeros(a.shape)
        moved_out = np.moveaxis(out, axis, 0)
        np.add.at(moved_out, indices, np.moveaxis(g, axis, 0))
        return (out,)

    return _make(values, (a,), bw, "take")


def reshape(a, shape) -> Tensor:
    a = tensor(a)
    try:
        values = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {shape}") from None
    return _make(values, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def expand(a, shape) -> Tensor:
    """Broadcast ``a`` to ``shape``; the backward pass sums over expanded axes."""
    a = tensor(a)
    try:
        values = np.broadcast_to(a.data, shape).copy()
    except ValueError:
        raise ShapeError(f"expand: cannot broadcast {a.shape} to {shape}") from None
    return _make(values, (a,), lambda g: (_unbroadcast(g, a.shape),), "expand")


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = tensor(a)
    values = np.sum(a.data, axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.asarray(values, dtype=np.float64), (a,), bw, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = tensor(a)
    if axis is None:
        count = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


# -- unary nonlinearities --------------------------------------------------------

def sigmoid(a) -> Tensor:
    a = tensor(a)
    x = a.data
    values = np.empty_like(x)
    pos = x >= 0
    values[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    values[~pos] = ex / (1.0 + ex)
    return _make(values, (a,), lambda g: (g * values * (1.0 - values),), "sigmoid")


def tanh(a) -> Tensor:
    a = tensor(a)
    values = np.tanh(a.data)
    return _make(values, (a,), lambda g: (g * (1.0 - values * values),), "tanh")


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = tensor(a)
    pos = a.data > 0
    values = np.where(pos, a.data, slope * a.data)
    return _make(values, (a,), lambda g: (np.where(pos, g, slope * g),), "leaky_relu")


def elu(a, alpha: float = 1.0) -> Tensor:
    a = tensor(a)
    pos = a.data > 0
    neg_part = alpha * np.expm1(np.minimum(a.data, 0.0))
    values = np.where(pos, a.data, neg_part)
    return _make(values, (a,), lambda g: (np.where(pos, g, g * (neg_part + alpha)),), "elu")


def exp(a) -> Tensor:
    a = tensor(a)
    with np.errstate(over="ignore"):
        values = np.exp(a.data)
    return _make(values, (a,), lambda g: (g * values,), "exp")


def log(a) -> Tensor:
    a = tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        values = np.log(a.data)
    return _make(values, (a,), lambda g: (g / a.data,), "log")


def clip(a, low: float, high: float) -> Tensor:
    """Clamp to ``[low, high]``; gradient is zero where the clamp is active."""
    a = tensor(a)
    inside = (a.data >= low) & (a.data <= high)
    values = np.clip(a.data, low, high)
    return _make(values, (a,), lambda g: (np.where(inside, g, 0.0),), "clip")


# -- attention -------------------------------------------------------------------

def segment_softmax(scores, segments, num_segments: int | None = None) -> Tensor:
    """Softmax of ``scores[..., e]`` within groups of edges sharing ``segments[e]``.

    Used for attention normalisation: ``segments`` holds each edge's
    destination node, so weights into every node sum to one. Segments with no
    edges simply produce no weights.
    """
    scores = tensor(scores)
    seg = np.asarray(segments, dtype=np.int64)
    if scores.ndim == 0 or scores.shape[-1] != seg.shape[0]:
        raise ShapeError(f"segment_softmax: scores {scores.shape} vs segments {seg.shape}")
    n_seg = int(seg.max()) + 1 if num_segments is None and seg.size else int(num_segments or 0)
    s = scores.data
    lead = s.shape[:-1]

    seg_max = np.full(lead + (n_seg,), -np.inf)
    np.maximum.at(np.moveaxis(seg_max, -1, 0), seg, np.moveaxis(s, -1, 0))
    ex = np.exp(s - seg_max[..., seg])
    denom = np.zeros(lead + (n_seg,))
    np.add.at(np.moveaxis(denom, -1, 0), seg, np.moveaxis(ex, -1, 0))
    weights = ex / denom[..., seg]

    def bw(g):
        wg = weights * g
        per_seg = np.zeros(lead + (n_seg,))
        np.add.at(np.moveaxis(per_seg, -1, 0), seg, np.moveaxis(wg, -1, 0))
        return (wg - weights * per_seg[..., seg],)

    return _make(weights, (scores,), bw, "segment_softmax")


# -- reverse pass ----------------------------------------------------------------

def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, params: Iterable[Tensor] | None = None) -> list[np.ndarray] | None:
    """Back-propagate from a scalar ``loss``.

    Leaf tensors reached from ``loss`` get their ``.grad`` overwritten. When
    ``params`` is given, their gradients are also returned in order, with
    zeros for parameters that do not influence the loss. The tape is freed.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    params = list(params) if params is not None else None
    if params is not None:
        for p in params:
            p.grad = None

    if loss.requires_grad:
        order = _topological(loss)
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg
        for node in order:
            if node._backward is not None:
                node._parents = ()
                node._backward = None

    if params is None:
        return None
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]


def grad_check(f: Callable[[list[Tensor]], Tensor], params: Sequence, h: float = 1e-5) -> float:
    """Largest relative disagreement between backward() and central differences.

    For every coordinate, ``|analytic - numeric| / max(1, |numeric|)``.
    """
    arrays = [np.array(tensor(p).data, dtype=np.float64) for p in params]
    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    analytic = backward(f(leaves), leaves)

    worst = 0.0
    for k, base in enumerate(arrays):
        flat = base.reshape(-1)
        for i in range(flat.size):
            probe = [Tensor(a) for a in arrays]
            plus = flat.copy()
            plus[i] += h
            probe[k] = Tensor(plus.reshape(base.shape))
            f_plus = f(probe).item()
            minus = flat.copy()
            minus[i] -= h
            probe[k] = Tensor(minus.reshape(base.shape))
            f_minus = f(probe).item()
            numeric = (f_plus - f_minus) / (2.0 * h)
            err = abs(analytic[k].reshape(-1)[i] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst
