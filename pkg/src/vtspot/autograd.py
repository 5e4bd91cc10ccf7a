"""Tape-based reverse-mode automatic differentiation over float64 numpy arrays.

Operations executed while a :class:`Tape` is active are recorded in creation
order, so the tape is already topologically sorted; :func:`backward` walks it
once in reverse.  Outside a tape every operation is plain forward math.

Broadcasting is deliberately limited to tensor-with-scalar.  Anything else
(bias rows, masks) goes through an explicit op such as :func:`broadcast_to`
or the fused :func:`linear`.
"""
from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor", "Tape", "ShapeError", "ContractError",
    "tensor", "parameter", "backward", "no_grad_value", "finite_diff_check",
    "add", "sub", "mul", "div", "neg", "matmul", "linear", "broadcast_to",
    "relu", "sigmoid", "tanh", "exp", "log", "sqrt", "sin", "cos", "abs_", "atan2",
    "minimum", "maximum", "softmax", "log_softmax", "sum_", "mean", "reshape",
    "transpose", "concat", "stack", "take_rows", "pick", "embedding", "layer_norm",
    "conv2d", "upsample2x", "bilinear_sample", "bilinear_sample_points",
    "cross_entropy_logits", "masked_fill_const",
]


class ShapeError(ValueError):
    """Operand extents are incompatible."""


class ContractError(RuntimeError):
    """A documented precondition of the autodiff engine was violated."""


_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def current_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; tapes are thread-local and may be nested (the
    innermost one records).
    """

    def __init__(self):
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        assert stack and stack[-1] is self
        stack.pop()
        return False

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, root: "Tensor") -> dict:
        return backward(root)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_tape", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._tape: Tape | None = None

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._tape is None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # -- operators -----------------------------------------------------
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

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return _getitem(self, index)

    def backward(self) -> dict:
        return backward(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None):
        return sum_(self, axis)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def no_grad_value(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: tuple, fn: Callable) -> Tensor:
    out = Tensor(data)
    tape = current_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._tape = tape
        tape.nodes.append((out, parents, fn))
    return out


def backward(root: Tensor) -> dict:
    """Propagate d(root)/d(.) to every leaf reachable on root's tape.

    Leaf gradients are accumulated into ``leaf.grad``; the returned dict maps
    each touched leaf to the gradient contributed by this call.
    """
    if not isinstance(root, Tensor) or root.data.size != 1:
        shape = getattr(root, "shape", None)
        raise ContractError(f"backward needs a scalar root, got shape {shape}")
    tape = root._tape
    if tape is None:
        raise ContractError("root was not produced on a tape")
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    leaves: dict[int, tuple[Tensor, np.ndarray]] = {}
    for out, parents, fn in reversed(tape.nodes):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        pgrads = fn(g)
        for p, pg in zip(parents, pgrads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if p._tape is tape:
                prev = grads.get(key)
                grads[key] = pg if prev is None else prev + pg
            else:
                prev = leaves.get(key)
                leaves[key] = (p, pg if prev is None else prev[1] + pg)
    result = {}
    for leaf, g in leaves.values():
        g = np.asarray(g, dtype=np.float64).reshape(leaf.shape)
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
        result[leaf] = g
    return result


# ----------------------------------------------------------------------
# elementwise
# ----------------------------------------------------------------------

def _binary_shapes(a: Tensor, b: Tensor, opname: str):
    if a.shape != b.shape and a.data.ndim != 0 and b.data.ndim != 0:
        raise ShapeError(f"{opname}: shapes {a.shape} and {b.shape} differ "
                         "(only scalar broadcasting is allowed)")


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "add")
    sa, sb = a.shape, b.shape
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "mul")
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b),
                   lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd
    return _result(out, (a, b),
                   lambda g: (_unbroadcast(g / bd, ad.shape),
                              _unbroadcast(-g * out / bd, bd.shape)))


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,))


def _unary(a, value, deriv) -> Tensor:
    a = _as_tensor(a)
    return _result(value, (a,), lambda g: (g * deriv(),))


def relu(a) -> Tensor:
    """max(x, 0); the subgradient at exactly 0 is 0."""
    a = _as_tensor(a)
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    out = np.empty_like(a.data)
    pos = a.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    e = np.exp(a.data[~pos])
    out[~pos] = e / (1.0 + e)
    return _unary(a, out, lambda: out * (1.0 - out))


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out = np.tanh(a.data)
    return _unary(a, out, lambda: 1.0 - out * out)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)
    return _unary(a, out, lambda: out)


def log(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    return _unary(a, np.log(x), lambda: 1.0 / x)


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    out = np.sqrt(a.data)
    return _unary(a, out, lambda: 0.5 / out)


def sin(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    return _unary(a, np.sin(x), lambda: np.cos(x))


def cos(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    return _unary(a, np.cos(x), lambda: -np.sin(x))


def abs_(a) -> Tensor:
    """|x|; subgradient 0 at 0."""
    a = _as_tensor(a)
    x = a.data
    return _unary(a, np.abs(x), lambda: np.sign(x))


def atan2(y, x) -> Tensor:
    y, x = _as_tensor(y), _as_tensor(x)
    _binary_shapes(y, x, "atan2")
    yd, xd = y.data, x.data
    r2 = xd * xd + yd * yd

    def fn(g):
        return (_unbroadcast(g * xd / r2, yd.shape), _unbroadcast(-g * yd / r2, xd.shape))

    return _result(np.arctan2(yd, xd), (y, x), fn)


def minimum(a, b) -> Tensor:
    """Elementwise min; ties route the gradient to ``a``."""
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "minimum")
    take_a = a.data <= b.data
    return _result(np.where(take_a, a.data, b.data), (a, b),
                   lambda g: (_unbroadcast(g * take_a, a.shape),
                              _unbroadcast(g * ~take_a, b.shape)))


def maximum(a, b) -> Tensor:
    """Elementwise max; ties route the gradient to ``a``."""
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "maximum")
    take_a = a.data >= b.data
    return _result(np.where(take_a, a.data, b.data), (a, b),
                   lambda g: (_unbroadcast(g * take_a, a.shape),
                              _unbroadcast(g * ~take_a, b.shape)))


def masked_fill_const(a, mask: np.ndarray, value: float) -> Tensor:
    """Replace entries where ``mask`` is true by a constant (no gradient there)."""
    a = _as_tensor(a)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.shape:
        raise ShapeError(f"mask shape {mask.shape} != tensor shape {a.shape}")
    return _result(np.where(mask, value, a.data), (a,), lambda g: (np.where(mask, 0.0, g),))


# ----------------------------------------------------------------------
# linear algebra
# ----------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product of 2-D operands, or batched over one matching leading axis."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != b.ndim or a.ndim not in (2, 3):
        raise ShapeError(f"matmul: unsupported ranks {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[-2] or (a.ndim == 3 and a.shape[0] != b.shape[0]):
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not align")
    ad, bd = a.data, b.data

    def fn(g):
        return (g @ np.swapaxes(bd, -1, -2) if a.requires_grad else None,
                np.swapaxes(ad, -1, -2) @ g if b.requires_grad else None)

    return _result(ad @ bd, (a, b), fn)


def linear(x, w, b=None) -> Tensor:
    """x[..., K] @ w[K, P] (+ b[P]) as one fused op."""
    x, w = _as_tensor(x), _as_tensor(w)
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: input {x.shape} vs weight {w.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, w.shape[0])
    out = x2 @ w.data
    parents: tuple = (x, w)
    if b is not None:
        b = _as_tensor(b)
        if b.shape != (w.shape[1],):
            raise ShapeError(f"linear: bias {b.shape} vs weight {w.shape}")
        out = out + b.data
        parents = (x, w, b)
    wd = w.data

    def fn(g):
        g2 = g.reshape(-1, wd.shape[1])
        gx = (g2 @ wd.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2 if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return _result(out.reshape(lead + (w.shape[1],)), parents, fn)


def broadcast_to(a, shape) -> Tensor:
    """Explicit numpy-style broadcast; the backward pass sums the expanded axes."""
    a = _as_tensor(a)
    shape = tuple(shape)
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast {a.shape} to {shape}") from exc
    src = a.shape

    def fn(g):
        extra = len(shape) - len(src)
        g = g.sum(axis=tuple(range(extra))) if extra else g
        axes = tuple(i for i, n in enumerate(src) if n == 1 and g.shape[i] != 1)
        return (g.sum(axis=axes, keepdims=True) if axes else g,)

    return _result(out, (a,), fn)


# ----------------------------------------------------------------------
# reductions and normalizations
# ----------------------------------------------------------------------

def _norm_axis(axis, ndim):
    if not -ndim <= axis < ndim:
        raise ShapeError(f"axis {axis} out of range for rank {ndim}")
    return axis % ndim


def softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    axis = _norm_axis(axis, a.ndim)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def fn(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out, (a,), fn)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    axis = _norm_axis(axis, a.ndim)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)
    return _result(out, (a,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


def sum_(a, axis=None) -> Tensor:
    a = _as_tensor(a)
    shape = a.shape
    if axis is None:
        return _result(np.asarray(a.data.sum()), (a,),
                       lambda g: (np.broadcast_to(g, shape).copy(),))
    axis = _norm_axis(axis, a.ndim)
    return _result(a.data.sum(axis=axis), (a,),
                   lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),))


def mean(a, axis=None) -> Tensor:
    a = _as_tensor(a)
    n = a.size if axis is None else a.shape[_norm_axis(axis, a.ndim)]
    return mul(sum_(a, axis), 1.0 / n)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale/shift by gamma[D], beta[D]."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: affine params {gamma.shape}/{beta.shape} vs width {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gamma.data
    lead = tuple(range(x.ndim - 1))

    def fn(g):
        gxhat = g * gd
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _result(xhat * gd + beta.data, (x, gamma, beta), fn)


# ----------------------------------------------------------------------
# shape manipulation and indexing
# ----------------------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {src} to {shape}") from exc
    return _result(out, (a,), lambda g: (g.reshape(src),))


def transpose(a, axes=None) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def concat(items: Sequence, axis: int = 0) -> Tensor:
    items = [_as_tensor(t) for t in items]
    if not items:
        raise ShapeError("concat of an empty list")
    axis = _norm_axis(axis, items[0].ndim)
    try:
        out = np.concatenate([t.data for t in items], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {[t.shape for t in items]}") from exc
    bounds = np.cumsum([0] + [t.shape[axis] for t in items])

    def fn(g):
        sl = [slice(None)] * g.ndim
        res = []
        for i in range(len(items)):
            sl[axis] = slice(bounds[i], bounds[i + 1])
            res.append(g[tuple(sl)])
        return tuple(res)

    return _result(out, tuple(items), fn)


def stack(items: Sequence, axis: int = 0) -> Tensor:
    items = [_as_tensor(t) for t in items]
    if not items:
        raise ShapeError("stack of an empty list")
    shapes = {t.shape for t in items}
    if len(shapes) != 1:
        raise ShapeError(f"stack: shapes differ {sorted(shapes)}")
    out = np.stack([t.data for t in items], axis=axis)
    axis = _norm_axis(axis, out.ndim)
    return _result(out, tuple(items),
                   lambda g: tuple(np.take(g, i, axis=axis) for i in range(len(items))))


def _getitem(a: Tensor, index) -> Tensor:
    out = a.data[index]
    shape = a.shape

    def fn(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return _result(np.array(out), (a,), fn)


def take_rows(a, idx) -> Tensor:
    """Rows ``a[idx]`` along axis 0 (repeated indices accumulate in backward)."""
    a = _as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < -a.shape[0] or idx.max() >= a.shape[0]):
        raise IndexError(f"row index out of range for extent {a.shape[0]}")
    shape = a.shape

    def fn(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return _result(a.data[idx], (a,), fn)


embedding = take_rows


def pick(a, idx) -> Tensor:
    """``a[i, idx[i]]`` for a 2-D tensor."""
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"pick expects a matrix, got {a.shape}")
    idx = np.asarray(idx, dtype=np.int64).reshape(-1)
    if idx.shape[0] != a.shape[0]:
        raise ShapeError(f"pick: {idx.shape[0]} indices for {a.shape[0]} rows")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[1]):
        raise IndexError(f"class index out of range [0, {a.shape[1]})")
    rows = np.arange(a.shape[0])
    shape = a.shape

    def fn(g):
        full = np.zeros(shape)
        full[rows, idx] = g
        return (full,)

    return _result(a.data[rows, idx], (a,), fn)


def cross_entropy_logits(logits, target: int, weight=None) -> Tensor:
    """weight[target] * -log softmax(logits)[target] for a 1-D logit vector."""
    logits = _as_tensor(logits)
    if logits.ndim != 1:
        raise ShapeError(f"expected 1-D logits, got {logits.shape}")
    k = logits.shape[0]
    if not 0 <= int(target) < k:
        raise IndexError(f"target {target} out of range [0, {k})")
    w = 1.0 if weight is None else float(np.asarray(weight, dtype=np.float64)[int(target)])
    lp = log_softmax(logits)
    return mul(neg(lp[int(target)]), w)


# ----------------------------------------------------------------------
# image ops
# ----------------------------------------------------------------------

def conv2d(x, w, b=None, stride: int = 1, padding: int = 0) -> Tensor:
    """x[C,H,W] * w[O,C,k,k] (+ b[O]) via im2col."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 3 or w.ndim != 4 or w.shape[1] != x.shape[0] or w.shape[2] != w.shape[3]:
        raise ShapeError(f"conv2d: input {x.shape} vs kernel {w.shape}")
    c, h, wd = x.shape
    o, _, k, _ = w.shape
    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding))) if padding else x.data
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: kernel {k} larger than padded input {xp.shape[1:]}")
    cols = np.empty((c, k, k, ho, wo))
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xp[:, i:i + stride * ho:stride, j:j + stride * wo:stride]
    cols = cols.reshape(c * k * k, ho * wo)
    wm = w.data.reshape(o, -1)
    out = wm @ cols
    parents: tuple = (x, w)
    if b is not None:
        b = _as_tensor(b)
        out = out + b.data[:, None]
        parents = (x, w, b)

    def fn(g):
        g2 = g.reshape(o, -1)
        gw = (g2 @ cols.T).reshape(w.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (wm.T @ g2).reshape(c, k, k, ho, wo)
            dxp = np.zeros(xp.shape)
            for i in range(k):
                for j in range(k):
                    dxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, i, j]
            gx = dxp[:, padding:padding + h, padding:padding + wd] if padding else dxp
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=1)

    return _result(out.reshape(o, ho, wo), parents, fn)


def upsample2x(x) -> Tensor:
    """Nearest-neighbour 2x upsampling of a [C,H,W] map."""
    x = _as_tensor(x)
    c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2)
    return _result(out, (x,), lambda g: (g.reshape(c, h, 2, w, 2).sum(axis=(2, 4)),))


def _bilinear_weights(h: int, w: int, xs: np.ndarray, ys: np.ndarray):
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx = xs - x0
    fy = ys - y0
    corners = []
    for dy, dx, wt in ((0, 0, (1 - fy) * (1 - fx)), (0, 1, (1 - fy) * fx),
                       (1, 0, fy * (1 - fx)), (1, 1, fy * fx)):
        yy, xx = y0 + dy, x0 + dx
        valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        flat = np.where(valid, yy * w + xx, 0)
        corners.append((flat, np.where(valid, wt, 0.0)))
    return corners


def bilinear_sample_points(fmap, xs, ys) -> Tensor:
    """Bilinear samples of a [C,H,W] map at pixel coordinates -> [C, P].

    Integer coordinates address pixel centres; neighbours outside the map
    contribute zero.  Differentiable with respect to the map only.
    """
    fmap = _as_tensor(fmap)
    if fmap.ndim != 3:
        raise ShapeError(f"expected a [C,H,W] map, got {fmap.shape}")
    c, h, w = fmap.shape
    xs = np.asarray(xs, dtype=np.float64).reshape(-1)
    ys = np.asarray(ys, dtype=np.float64).reshape(-1)
    corners = _bilinear_weights(h, w, xs, ys)
    flat = fmap.data.reshape(c, h * w)
    out = sum(flat[:, idx] * wt for idx, wt in corners)

    def fn(g):
        full = np.zeros((c, h * w))
        for idx, wt in corners:
            np.add.at(full.T, idx, (g * wt).T)
        return (full.reshape(c, h, w),)

    return _result(out, (fmap,), fn)


def bilinear_sample(fmap, x: float, y: float) -> Tensor:
    """Single-point form of :func:`bilinear_sample_points` -> [C]."""
    return reshape(bilinear_sample_points(fmap, [x], [y]), (_as_tensor(fmap).shape[0],))


# ----------------------------------------------------------------------
# verification
# ----------------------------------------------------------------------

def finite_diff_check(f: Callable, x, eps: float = 1e-6, indices=None) -> float:
    """Max over checked coordinates of |analytic - central difference| / max(1, |analytic|).

    ``x`` is a leaf tensor or a sequence of them; ``f`` is called with ``x``
    as given and must return a scalar tensor.  ``indices`` optionally limits
    the check to (tensor position, flat index) pairs (or flat indices when
    ``x`` is a single tensor).
    """
    single = isinstance(x, Tensor)
    xs = [x] if single else list(x)
    for t in xs:
        t.requires_grad = True
        t.grad = None
    with Tape():
        y = f(x)
        backward(y)
    analytic = [t.grad if t.grad is not None else np.zeros(t.shape) for t in xs]
    if indices is None:
        coords = [(i, j) for i, t in enumerate(xs) for j in range(t.size)]
    elif single:
        coords = [(0, int(j)) for j in indices]
    else:
        coords = [(int(i), int(j)) for i, j in indices]
    worst = 0.0
    for i, j in coords:
        flat = xs[i].data.reshape(-1)
        orig = flat[j]
        flat[j] = orig + eps
        fp = float(f(x).data)
        flat[j] = orig - eps
        fm = float(f(x).data)
        flat[j] = orig
        num = (fp - fm) / (2 * eps)
        a = float(analytic[i].reshape(-1)[j])
        worst = max(worst, abs(a - num) / max(1.0, abs(a)))
    for t in xs:
        t.grad = None
    return worst
