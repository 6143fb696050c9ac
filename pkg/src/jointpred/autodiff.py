"""Reverse-mode automatic differentiation over float64 numpy arrays.

Only the operations the prediction models use are provided. Every op is a
plain function that takes tensors (or array-likes, treated as constants) and
returns a new :class:`Tensor`; when any input requires a gradient the result
remembers its parents and a closure mapping the upstream gradient to one
gradient per parent. :func:`backward` replays those closures in reverse
topological order.
"""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "no_grad",
    "forward_op",
    "backward",
    "grad_check",
    "grad_check_detail",
    "piece_trace",
    "OPS",
]


class ShapeError(ValueError):
    """Raised when an op receives inputs of incompatible shapes."""


_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def piece_trace():
    """Record which piece of every piecewise op (relu, max, argmin, smooth-L1) is active.

    Yields a list that fills with one byte string per piecewise op evaluated
    in this thread. Two evaluations with equal traces lie in the same smooth
    region of the function.
    """
    prev = getattr(_state, "pieces", None)
    trace: list[bytes] = []
    _state.pieces = trace
    try:
        yield trace
    finally:
        _state.pieces = prev


def _record_piece(selector: np.ndarray) -> None:
    trace = getattr(_state, "pieces", None)
    if trace is not None:
        sel = np.asarray(selector)
        trace.append(np.packbits(sel).tobytes() if sel.dtype == bool else sel.astype(np.int64).tobytes())


@contextlib.contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    prev = _grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    """Dense float64 array with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"

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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # operator sugar
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

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def max(self, axis=None, keepdims=False):
        return reduce_max(self, axis, keepdims)

    def relu(self):
        return relu(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)

    def backward(self) -> None:
        backward(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], fn: Callable, op: str) -> Tensor:
    out = Tensor(data)
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = fn
        out.op = op
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_check(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# elementwise binary ops ----------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_check("add", a, b)
    sa, sb = a.shape, b.shape
    return _node(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_check("sub", a, b)
    sa, sb = a.shape, b.shape
    return _node(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_check("mul", a, b)
    ad, bd = a.data, b.data
    return _node(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
        "mul",
    )


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_check("div", a, b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _node(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)),
        "div",
    )


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None
    ad, bd = a.data, b.data

    def fn(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _node(ad @ bd, (a, b), fn, "matmul")


# structural ops ------------------------------------------------------------


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = tuple(_as_tensor(t) for t in tensors)
    if not ts:
        raise ShapeError("concat: no inputs")
    nd = ts[0].ndim
    ax = axis % nd
    for t in ts[1:]:
        if t.ndim != nd or any(t.shape[i] != ts[0].shape[i] for i in range(nd) if i != ax):
            raise ShapeError(f"concat: incompatible shapes {ts[0].shape} and {t.shape}")
    sizes = [t.shape[ax] for t in ts]
    cuts = np.cumsum(sizes)[:-1]

    def fn(g):
        return tuple(np.split(g, cuts, axis=ax))

    return _node(np.concatenate([t.data for t in ts], axis=ax), ts, fn, "concat")


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def getitem(a, idx) -> Tensor:
    """Slice or gather; repeated gather indices accumulate in the backward pass."""
    a = _as_tensor(a)
    shape = a.shape
    basic = _is_basic_index(idx)

    def fn(g):
        out = np.zeros(shape)
        if basic:
            out[idx] = g
        else:
            np.add.at(out, idx, g)
        return (out,)

    try:
        data = a.data[idx]
    except IndexError as e:
        raise ShapeError(f"slice: bad index for shape {shape}: {e}") from None
    return _node(np.asarray(data, dtype=np.float64), (a,), fn, "slice")


slice_ = getitem


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    old = a.shape
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {old} into {tuple(shape)}") from None
    return _node(data, (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = _as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(int(x) % a.ndim for x in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for shape {a.shape}")
    inv = tuple(np.argsort(axes))
    return _node(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


# elementwise unary ops -----------------------------------------------------


def relu(a) -> Tensor:
    a = _as_tensor(a)
    pos = a.data > 0
    _record_piece(pos)
    return _node(np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,), "relu")


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def expm1(a) -> Tensor:
    a = _as_tensor(a)
    out = np.expm1(a.data)
    return _node(out, (a,), lambda g: (g * (out + 1.0),), "expm1")


def log(a) -> Tensor:
    a = _as_tensor(a)
    ad = a.data
    return _node(np.log(ad), (a,), lambda g: (g / ad,), "log")


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    out = np.sqrt(a.data)
    return _node(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def smooth_l1(pred, target, beta: float = 1.0) -> Tensor:
    """Elementwise Huber-style loss: 0.5 d^2 / beta inside |d| < beta, |d| - beta/2 outside."""
    pred, target = _as_tensor(pred), _as_tensor(target)
    _broadcast_check("smooth_l1", pred, target)
    d = pred.data - target.data
    ad = np.abs(d)
    inner = ad < beta
    _record_piece(inner)
    out = np.where(inner, 0.5 * d * d / beta, ad - 0.5 * beta)
    dd = np.where(inner, d / beta, np.sign(d))
    sp, st = pred.shape, target.shape
    return _node(
        out,
        (pred, target),
        lambda g: (_unbroadcast(g * dd, sp), -_unbroadcast(g * dd, st)),
        "smooth_l1",
    )


# last-axis normalisers -----------------------------------------------------


def softmax(a) -> Tensor:
    a = _as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)
    return _node(s, (a,), lambda g: (s * (g - (g * s).sum(axis=-1, keepdims=True)),), "softmax")


def log_softmax(a) -> Tensor:
    a = _as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    s = np.exp(out)
    return _node(out, (a,), lambda g: (g - s * g.sum(axis=-1, keepdims=True),), "log_softmax")


def layer_norm(a, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis without affine terms."""
    a = _as_tensor(a)
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv

    def fn(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - xhat * gx),)

    return _node(xhat, (a,), fn, "layer_norm")


# reductions ----------------------------------------------------------------


def _expand_reduced(g: np.ndarray, shape, axis, keepdims) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(np.reshape(g, (1,) * len(shape)), shape)
    if not keepdims:
        axes = (axis,) if isinstance(axis, (int, np.integer)) else tuple(axis)
        axes = sorted(x % len(shape) for x in axes)
        for ax in axes:
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    shape = a.shape
    # contiguous input: every reduced row is summed by the same pairwise scheme
    return _node(
        np.ascontiguousarray(a.data).sum(axis=axis, keepdims=keepdims),
        (a,),
        lambda g: (_expand_reduced(g, shape, axis, keepdims).copy(),),
        "reduce_sum",
    )


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    shape = a.shape
    out = a.data.mean(axis=axis, keepdims=keepdims)
    n = a.data.size / max(out.size, 1)
    return _node(
        out,
        (a,),
        lambda g: (_expand_reduced(g, shape, axis, keepdims) / n,),
        "reduce_mean",
    )


def reduce_max(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Max along one axis; the gradient goes to the first maximal entry."""
    a = _as_tensor(a)
    ax = axis % a.ndim
    if a.shape[ax] == 0:
        raise ShapeError(f"reduce_max: empty axis {ax} in shape {a.shape}")
    idx = np.expand_dims(a.data.argmax(axis=ax), ax)
    _record_piece(idx)
    out = np.take_along_axis(a.data, idx, axis=ax)
    shape = a.shape

    def fn(g):
        grad = np.zeros(shape)
        gg = g if keepdims else np.expand_dims(g, ax)
        np.put_along_axis(grad, idx, gg, axis=ax)
        return (grad,)

    return _node(out if keepdims else np.squeeze(out, ax), (a,), fn, "reduce_max")


def min_index(a, axis: int = -1) -> np.ndarray:
    """Index of the minimum along ``axis`` (lowest index on ties). Not differentiable."""
    idx = np.argmin(_as_tensor(a).data, axis=axis)
    _record_piece(idx)
    return idx


OPS: dict[str, Callable] = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "neg": neg,
    "concat": lambda *ts, axis=-1: concat(ts, axis=axis),
    "slice": getitem,
    "reshape": reshape,
    "transpose": transpose,
    "relu": relu,
    "softmax": softmax,
    "log_softmax": log_softmax,
    "layer_norm": layer_norm,
    "reduce_mean": reduce_mean,
    "reduce_sum": reduce_sum,
    "reduce_max": reduce_max,
    "min_index": min_index,
    "exp": exp,
    "expm1": expm1,
    "log": log,
    "sqrt": sqrt,
    "smooth_l1": smooth_l1,
}


def forward_op(kind: str, *inputs, **kwargs):
    """Dispatch an op by name, e.g. ``forward_op("softmax", x)``."""
    try:
        fn = OPS[kind]
    except KeyError:
        raise ValueError(f"unknown op {kind!r}") from None
    return fn(*inputs, **kwargs)


# backward pass -------------------------------------------------------------


def _topo_order(root: Tensor) -> list[Tensor]:
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor) -> None:
    """Populate ``.grad`` of every grad-requiring tensor that ``root`` depends on.

    Gradients are added to any existing ``.grad`` buffer, so call
    ``zero_grad`` on parameters between optimisation steps.
    """
    if root.size != 1:
        raise ShapeError(f"backward: root must be scalar, got shape {root.shape}")
    if not root.requires_grad:
        return
    order = _topo_order(root)
    grads: dict[int, np.ndarray] = {id(root): np.ones(root.shape)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        node.grad = g.copy() if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = np.array(pg, dtype=np.float64)


@dataclass
class GradCheckResult:
    max_error: float
    checked: int
    skipped: int  # coordinates whose +-h evaluations crossed a kink


def grad_check_detail(
    f: Callable[[Tensor], Tensor],
    x,
    h: float = 1e-5,
    coords: Sequence[int] | None = None,
) -> GradCheckResult:
    """Compare reverse-mode gradients of scalar ``f`` at ``x`` to central differences.

    The error at a coordinate is ``|analytic - numeric| / max(1, |analytic|)``.
    A coordinate is skipped when ``x + h`` or ``x - h`` activates a different
    piece of some piecewise op than ``x`` does (see :func:`piece_trace`):
    there the central difference straddles a kink and is not an estimate of
    the derivative. ``coords`` restricts the check to a subset of flat
    indices.
    """
    if h <= 0:
        raise ValueError("grad_check: step h must be positive")
    x0 = np.array(_as_tensor(x).data, dtype=np.float64)
    xt = Tensor(x0.copy(), requires_grad=True)
    with piece_trace() as base:
        y = f(xt)
    if not np.all(np.isfinite(y.data)):
        raise FloatingPointError("grad_check: non-finite function value at x")
    backward(y)
    analytic = (np.zeros_like(x0) if xt.grad is None else xt.grad).reshape(-1)
    flat = x0.reshape(-1)
    idxs = range(flat.size) if coords is None else coords
    worst, checked, skipped = 0.0, 0, 0
    with no_grad():
        for i in idxs:
            vals, same = [], True
            for step in (h, -h):
                xp = flat.copy()
                xp[i] += step
                with piece_trace() as tr:
                    v = f(Tensor(xp.reshape(x0.shape))).item()
                if not np.isfinite(v):
                    raise FloatingPointError(f"grad_check: non-finite function value at coordinate {i}")
                vals.append(v)
                same = same and tr == base
            if not same:
                skipped += 1
                continue
            num = (vals[0] - vals[1]) / (2 * h)
            a = analytic[i]
            worst = max(worst, abs(a - num) / max(1.0, abs(a)))
            checked += 1
    return GradCheckResult(worst, checked, skipped)


def grad_check(
    f: Callable[[Tensor], Tensor],
    x,
    h: float = 1e-5,
    coords: Sequence[int] | None = None,
) -> float:
    """Max relative gradient error of ``f`` at ``x``; see :func:`grad_check_detail`."""
    return grad_check_detail(f, x, h, coords).max_error
