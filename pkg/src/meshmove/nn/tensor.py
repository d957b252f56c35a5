"""
Reverse-mode automatic differentiation over float64 numpy arrays.

Operations executed while a :class:`Tape` is active, and touching at least
one tensor that requires a gradient, append a record to the tape.
``Tape.backward`` replays the records in reverse and accumulates gradients
into ``Tensor.grad``.  Outside a tape the same functions just compute values.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError


class Tape:
    _stack: list["Tape"] = []

    def __init__(self):
        self.records: list[tuple] = []

    def __enter__(self) -> "Tape":
        Tape._stack.append(self)
        return self

    def __exit__(self, *exc):
        Tape._stack.remove(self)
        return False

    @classmethod
    def current(cls) -> "Tape | None":
        return cls._stack[-1] if cls._stack else None

    def record(self, out: "Tensor", parents, backward) -> None:
        out.node = len(self.records)
        self.records.append((out, parents, backward))

    def backward(self, loss: "Tensor", grad=None) -> None:
        """Accumulate d(loss)/d(t) into ``t.grad`` for every recorded tensor requiring grad."""
        seed = np.ones_like(loss.data) if grad is None else np.asarray(grad, dtype=float)
        if seed.shape != loss.data.shape:
            raise ShapeError(f"backward: seed gradient shape {seed.shape} != output shape {loss.data.shape}")
        pending: dict[int, np.ndarray] = {id(loss): seed}
        for out, parents, fn in reversed(self.records):
            g = pending.pop(id(out), None)
            if g is None:
                continue
            for parent, pg in zip(parents, fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent.node is None:  # leaf
                    parent.grad = pg.copy() if parent.grad is None else parent.grad + pg
                elif id(parent) in pending:
                    pending[id(parent)] = pending[id(parent)] + pg
                else:
                    pending[id(parent)] = pg
        leaf = pending.pop(id(loss), None)
        if leaf is not None and loss.node is None and loss.requires_grad:
            loss.grad = leaf if loss.grad is None else loss.grad + leaf


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self.node = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __len__(self):
        return len(self.data)

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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward) -> Tensor:
    stack = Tape._stack
    if not stack:
        return Tensor(data)
    needs = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs)
    if needs:
        stack[-1].record(out, parents, backward)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _binary(op, fn, a, b):
    try:
        return fn(a.data, b.data)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(_binary("add", np.add, a, b), (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(_binary("sub", np.subtract, a, b), (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        _binary("mul", np.multiply, a, b), (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _binary("div", np.divide, a, b)
    return _make(
        out, (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)),
    )


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(a.data @ b.data, (a, b), backward)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} into {shape}") from None
    return _make(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return _make(out, (a,), lambda g: (np.transpose(g, inv),))


def getitem(a, index) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(a.data[index], (a,), backward)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), backward)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return mul(tsum(a, axis, keepdims), 1.0 / count)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]} on axis {axis}") from None
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make(out, tuple(tensors), lambda g: tuple(np.split(g, sizes, axis=axis)))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


SELU_ALPHA = 1.6732632423543772
SELU_SCALE = 1.0507009873554805


def selu(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    neg = np.minimum(x, 0.0)
    # max(x, 0) + alpha * (exp(min(x, 0)) - 1), in place and without a boolean select
    out = np.expm1(neg)
    out *= SELU_ALPHA
    out += x
    out -= neg
    out *= SELU_SCALE

    def backward(g):
        return (g * SELU_SCALE * np.where(x > 0, 1.0, SELU_ALPHA * np.exp(neg)),)

    return _make(out, (a,), backward)


def softplus(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = np.logaddexp(0.0, x)
    return _make(out, (a,), lambda g: (g * np.exp(x - out),))


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), backward)


def cumsum(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        return (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)

    return _make(np.cumsum(a.data, axis=axis), (a,), backward)


def clip(a, lo=None, hi=None) -> Tensor:
    """Clamp; the gradient is passed only where the input was inside the bounds."""
    a = as_tensor(a)
    out = np.clip(a.data, lo, hi)
    inside = out == a.data
    return _make(out, (a,), lambda g: (g * inside,))


def take_along_last(a, index) -> Tensor:
    """``out[..., j] = a[..., index[..., j]]``."""
    a = as_tensor(a)
    index = np.asarray(index)

    def backward(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, index, 0.0, axis=-1)
        rows = np.indices(index.shape)
        np.add.at(full, tuple(rows[:-1]) + (index,), g)
        return (full,)

    return _make(np.take_along_axis(a.data, index, axis=-1), (a,), backward)


def gather_rows(a, index) -> Tensor:
    """Rows ``a[index]`` along the first axis."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(a.data[index], (a,), backward)


def segment_sum(a, segments, n_segments: int) -> Tensor:
    """Sum rows of ``a`` that share a segment id; output has ``n_segments`` rows."""
    a = as_tensor(a)
    segments = np.asarray(segments, dtype=np.int64)
    if len(segments) != a.shape[0]:
        raise ShapeError(f"segment_sum: {len(segments)} segment ids for {a.shape[0]} rows")
    out = np.zeros((n_segments,) + a.shape[1:])
    np.add.at(out, segments, a.data)
    return _make(out, (a,), lambda g: (g[segments],))


def segment_softmax(logits, segments, n_segments: int) -> Tensor:
    """Softmax of 1-D ``logits`` within each segment."""
    logits = as_tensor(logits)
    segments = np.asarray(segments, dtype=np.int64)
    if logits.ndim != 1 or len(segments) != len(logits.data):
        raise ShapeError(f"segment_softmax: logits {logits.shape} vs {len(segments)} segment ids")
    peak = np.full(n_segments, -np.inf)
    np.maximum.at(peak, segments, logits.data)
    e = np.exp(logits.data - peak[segments])
    denom = np.zeros(n_segments)
    np.add.at(denom, segments, e)
    out = e / denom[segments]

    def backward(g):
        dot = np.zeros(n_segments)
        np.add.at(dot, segments, g * out)
        return (out * (g - dot[segments]),)

    return _make(out, (logits,), backward)


def l1_loss(pred, target) -> Tensor:
    """Mean absolute error."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"l1_loss: prediction {pred.shape} vs target {target.shape}")
    diff = pred.data - target.data
    n = diff.size
    return _make(
        np.abs(diff).mean(), (pred, target),
        lambda g: (g * np.sign(diff) / n, -g * np.sign(diff) / n),
    )


def global_average_pool(a) -> Tensor:
    """(B, C, H, W) -> (B, C)."""
    a = as_tensor(a)
    if a.ndim != 4:
        raise ShapeError(f"global_average_pool: expected (B, C, H, W), got {a.shape}")
    hw = a.shape[2] * a.shape[3]
    return _make(
        a.data.mean(axis=(2, 3)), (a,),
        lambda g: (np.broadcast_to(g[:, :, None, None] / hw, a.shape).copy(),),
    )


def conv2d(x, w, b=None, stride: int = 1, padding: int = 0) -> Tensor:
    """
    2-D cross-correlation.

    Parameters
    ----------
    x : (B, C, H, W)
    w : (O, C, kh, kw)
    b : (O,), optional
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with kernel {w.shape}")
    B, C, H, W = x.shape
    O, _, kh, kw = w.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    Ho = (H + 2 * padding - kh) // stride + 1
    Wo = (W + 2 * padding - kw) // stride + 1
    if Ho <= 0 or Wo <= 0:
        raise ShapeError(f"conv2d: kernel {w.shape} larger than padded input {xp.shape}")
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride][:, :, :Ho, :Wo]  # (B, C, Ho, Wo, kh, kw)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * kh * kw)
    wmat = w.data.reshape(O, -1)
    out = (cols @ wmat.T).reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2)
    parents = (x, w)
    if b is not None:
        b = as_tensor(b)
        out = out + b.data[None, :, None, None]
        parents = (x, w, b)

    def backward(g):
        gm = g.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, O)
        gw = (gm.T @ cols).reshape(w.shape)
        gcols = (gm @ wmat).reshape(B, Ho, Wo, C, kh, kw)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        gx = gxp[:, :, padding:padding + H, padding:padding + W]
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return _make(out, parents, backward)
