"""Differentiable ops over :class:`Tensor`.

Broadcasting is limited to scalar-vs-tensor and equal shapes.  Plain numpy
arrays and python scalars are accepted as constants wherever a tensor operand
is expected.
"""

from __future__ import annotations

from typing import Iterable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, as_tensor, make_op

# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def _binary_operands(a, b):
    a_is_t, b_is_t = isinstance(a, Tensor), isinstance(b, Tensor)
    if not a_is_t and not b_is_t:
        raise TypeError("at least one operand must be a Tensor")
    ref = a if a_is_t else b
    dtype = ref.dtype

    def coerce(x):
        if isinstance(x, Tensor):
            return x
        arr = np.asarray(x, dtype=dtype)
        return Tensor(arr, dtype=dtype)

    a, b = coerce(a), coerce(b)
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeError(f"incompatible shapes {a.shape} and {b.shape}")
    return a, b


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.asarray(g.sum(), dtype=g.dtype).reshape(shape)


def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_op(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_op(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_op(a.data * b.data, (a, b), backward)


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so large |x| never overflows exp
    d = x.data
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(d.dtype)

    def backward(g):
        return (g * out * (1.0 - out),)

    return make_op(out, (x,), backward)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def backward(g):
        return (g * (1.0 - out * out),)

    return make_op(out, (x,), backward)


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0

    def backward(g):
        return (g * pos,)

    return make_op(x.data * pos, (x,), backward)


def leaky_relu(x: Tensor, alpha: float = 0.2) -> Tensor:
    slope = np.where(x.data > 0, 1.0, alpha).astype(x.dtype)

    def backward(g):
        return (g * slope,)

    return make_op(x.data * slope, (x,), backward)


def absolute(x: Tensor) -> Tensor:
    sign = np.sign(x.data)

    def backward(g):
        return (g * sign,)

    return make_op(np.abs(x.data), (x,), backward)


def square(x: Tensor) -> Tensor:
    def backward(g):
        return (2.0 * g * x.data,)

    return make_op(x.data * x.data, (x,), backward)


_POINTWISE = {
    "sigmoid": sigmoid,
    "relu": relu,
    "tanh": tanh,
    "leaky_relu": leaky_relu,
    "abs": absolute,
    "square": square,
    "add": add,
    "sub": sub,
    "mul": mul,
}


def pointwise(kind: str, *args, **kwargs) -> Tensor:
    """Dispatch an elementwise op by name, e.g. ``pointwise("leaky_relu", x, alpha=0.2)``."""
    try:
        fn = _POINTWISE[kind]
    except KeyError:
        raise ValueError(f"unknown pointwise op {kind!r}") from None
    return fn(*args, **kwargs)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def _norm_axes(axes, ndim: int) -> tuple:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"axis {ax} out of range for rank {ndim}")
        out.append(ax % ndim)
    return tuple(sorted(set(out)))


def _ordered_sum(d: np.ndarray, axes: tuple) -> np.ndarray:
    # cumsum accumulates strictly left to right, unlike np.sum's pairwise scheme
    if not axes:
        return d.copy()
    moved = np.moveaxis(d, axes, tuple(range(len(axes))))
    flat = moved.reshape((-1,) + moved.shape[len(axes):])
    if flat.shape[0] == 0:
        return np.zeros(flat.shape[1:], dtype=d.dtype)
    return np.cumsum(flat, axis=0, dtype=d.dtype)[-1]


def sum(x: Tensor, axes=None) -> Tensor:  # noqa: A001
    axes = _norm_axes(axes, x.ndim)
    out = _ordered_sum(x.data, axes)
    kept = tuple(1 if i in axes else n for i, n in enumerate(x.shape))

    def backward(g):
        return (np.broadcast_to(g.reshape(kept), x.shape).astype(x.dtype, copy=True),)

    return make_op(np.asarray(out, dtype=x.dtype), (x,), backward)


def mean(x: Tensor, axes=None) -> Tensor:
    axes = _norm_axes(axes, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return mul(sum(x, axes), 1.0 / max(count, 1))


def abs_sum(x: Tensor, axes=None) -> Tensor:
    return sum(absolute(x), axes)


def reduce(kind: str, x: Tensor, axes=None) -> Tensor:
    if kind == "sum":
        return sum(x, axes)
    if kind == "mean":
        return mean(x, axes)
    if kind == "abs_sum":
        return abs_sum(x, axes)
    raise ValueError(f"unknown reduction {kind!r}")


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    out = x.data.reshape(shape)

    def backward(g):
        return (g.reshape(x.shape),)

    return make_op(out, (x,), backward)


def transpose(x: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def backward(g):
        return (np.ascontiguousarray(g.transpose(inv)),)

    return make_op(np.ascontiguousarray(x.data.transpose(axes)), (x,), backward)


def getitem(x: Tensor, index) -> Tensor:
    out = x.data[index]
    if not isinstance(out, np.ndarray):
        out = np.asarray(out, dtype=x.dtype)

    def backward(g):
        full = np.zeros_like(x.data)
        full[index] = g
        return (full,)

    return make_op(np.array(out, copy=True), (x,), backward)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    dtype = next((t.dtype for t in ts if t.requires_grad), ts[0].dtype)
    arrays = [t.data.astype(dtype, copy=False) for t in ts]
    out = np.concatenate(arrays, axis=axis)
    bounds = np.cumsum([0] + [a.shape[axis] for a in arrays])

    def backward(g):
        grads = []
        for i in range(len(ts)):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(bounds[i], bounds[i + 1])
            grads.append(np.ascontiguousarray(g[tuple(sl)]))
        return tuple(grads)

    return make_op(out, ts, backward)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D product, or batched over a shared leading axis for rank-3 operands."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != b.ndim or a.ndim not in (2, 3):
        raise ShapeError(f"matmul expects two rank-2 or two rank-3 tensors, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul dimension mismatch {a.shape} @ {b.shape}")

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(a.data, -1, -2) @ g if b.requires_grad else None
        return ga, gb

    return make_op(a.data @ b.data, (a, b), backward)


# ---------------------------------------------------------------------------
# convolution (N spatial dims; layout N, C, *spatial)
# ---------------------------------------------------------------------------


def _tuple(v, n: int) -> tuple:
    if isinstance(v, (tuple, list)):
        if len(v) != n:
            raise ShapeError(f"expected {n} values, got {v}")
        return tuple(int(i) for i in v)
    return (int(v),) * n


def _pad_input(x: np.ndarray, pad: tuple) -> np.ndarray:
    if not any(pad):
        return x
    return np.pad(x, [(0, 0), (0, 0)] + [(p, p) for p in pad])


def _windows(xp: np.ndarray, ksize: tuple, stride: tuple) -> np.ndarray:
    nd = len(ksize)
    win = sliding_window_view(xp, ksize, axis=tuple(range(2, 2 + nd)))
    sl = (slice(None), slice(None)) + tuple(slice(None, None, s) for s in stride)
    return win[sl]  # [N, C, *out, *k]


def _im2col(x: np.ndarray, ksize: tuple, stride: tuple, pad: tuple) -> np.ndarray:
    """Patches as a ``[N * prod(out), C * prod(k)]`` matrix."""
    nd = len(ksize)
    win = _windows(_pad_input(x, pad), ksize, stride)  # [N, C, *out, *k]
    perm = (0,) + tuple(range(2, 2 + nd)) + (1,) + tuple(range(2 + nd, 2 + 2 * nd))
    win = win.transpose(perm)
    return np.ascontiguousarray(win).reshape(int(np.prod(win.shape[: 1 + nd])), -1), win.shape[1 : 1 + nd]


def _conv_forward(x: np.ndarray, w: np.ndarray, stride: tuple, pad: tuple, cols=None) -> np.ndarray:
    nd = w.ndim - 2
    if cols is None:
        cols, out_sp = _im2col(x, w.shape[2:], stride, pad)
    else:
        cols, out_sp = cols
    out = cols @ w.reshape(w.shape[0], -1).T  # [N * prod(out), K]
    out = out.reshape((x.shape[0],) + tuple(out_sp) + (w.shape[0],))
    return np.ascontiguousarray(np.moveaxis(out, -1, 1))


def _conv_input_grad(g: np.ndarray, w: np.ndarray, stride: tuple, pad: tuple, in_shape: tuple) -> np.ndarray:
    """Adjoint of :func:`_conv_forward` with respect to its input."""
    nd = w.ndim - 2
    n, k = g.shape[:2]
    c = w.shape[1]
    padded = tuple(s + 2 * p for s, p in zip(in_shape[2:], pad))
    gx = np.zeros((n, c) + padded, dtype=g.dtype)
    out_sp = g.shape[2:]
    gmat = np.moveaxis(g, 1, -1).reshape(-1, k)  # [N * prod(out), K]
    cols = (gmat @ w.reshape(k, -1)).reshape((n,) + out_sp + (c,) + w.shape[2:])
    cols = np.moveaxis(cols, 1 + nd, 1)  # [N, C, *out, *k]
    for offs in np.ndindex(*w.shape[2:]):
        sl = (slice(None), slice(None)) + tuple(
            slice(o, o + s * (m - 1) + 1, s) for o, s, m in zip(offs, stride, out_sp)
        )
        gx[sl] += cols[(Ellipsis,) + offs]
    crop = (slice(None), slice(None)) + tuple(slice(p, p + s) for p, s in zip(pad, in_shape[2:]))
    return np.ascontiguousarray(gx[crop])


def _conv_weight_grad(x: np.ndarray, g: np.ndarray, stride: tuple, pad: tuple, kshape: tuple, cols=None) -> np.ndarray:
    if cols is None:
        cols, _ = _im2col(x, kshape, stride, pad)
    else:
        cols = cols[0]
    k = g.shape[1]
    gmat = np.moveaxis(g, 1, -1).reshape(-1, k)
    return (gmat.T @ cols).reshape((k, x.shape[1]) + tuple(kshape))


def _check_conv(x: Tensor, w: Tensor, nd: int, name: str):
    if x.ndim != nd + 2 or w.ndim != nd + 2:
        raise ShapeError(f"{name}: expected rank-{nd + 2} input and weight, got {x.shape} and {w.shape}")


def _convnd(x: Tensor, w: Tensor, b: Optional[Tensor], stride, pad, nd: int, name: str) -> Tensor:
    _check_conv(x, w, nd, name)
    stride, pad = _tuple(stride, nd), _tuple(pad, nd)
    if min(stride) < 1:
        raise ValueError(f"{name}: stride must be >= 1")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"{name}: input channels (axis 1) {x.shape[1]} != weight in-channels (axis 1) {w.shape[1]}")
    for ax, (s, p, k) in enumerate(zip(x.shape[2:], pad, w.shape[2:])):
        if s + 2 * p < k:
            raise ShapeError(f"{name}: kernel extent {k} exceeds padded input extent {s + 2 * p} on axis {ax + 2}")
    cols = _im2col(x.data, w.shape[2:], stride, pad) if w.requires_grad else None
    out = _conv_forward(x.data, w.data, stride, pad, cols)
    parents = [x, w]
    if b is not None:
        if b.shape != (w.shape[0],):
            raise ShapeError(f"{name}: bias shape {b.shape} != ({w.shape[0]},)")
        out = out + b.data.reshape((1, -1) + (1,) * nd)
        parents.append(b)

    def backward(g):
        gx = _conv_input_grad(g, w.data, stride, pad, x.shape) if x.requires_grad else None
        gw = _conv_weight_grad(x.data, g, stride, pad, w.shape[2:], cols) if w.requires_grad else None
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0,) + tuple(range(2, 2 + nd))) if b.requires_grad else None)
        return tuple(grads)

    return make_op(out.astype(x.dtype, copy=False), parents, backward)


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride=1, pad=0) -> Tensor:
    """Cross-correlation of ``x[N,C,H,W]`` with ``w[K,C,kh,kw]``, zero padding."""
    return _convnd(x, w, b, stride, pad, 2, "conv2d")


def conv3d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride=1, pad=0) -> Tensor:
    """Cross-correlation of ``x[N,C,D,H,W]`` with ``w[K,C,kd,kh,kw]``, zero padding."""
    return _convnd(x, w, b, stride, pad, 3, "conv3d")


def conv_transpose_output_shape(in_sp: Sequence[int], ksize, stride, pad) -> tuple:
    return tuple((s - 1) * st - 2 * p + k for s, k, st, p in zip(in_sp, ksize, stride, pad))


def _conv_transposend(x: Tensor, w: Tensor, b: Optional[Tensor], stride, pad, nd: int, name: str) -> Tensor:
    _check_conv(x, w, nd, name)
    stride, pad = _tuple(stride, nd), _tuple(pad, nd)
    if min(stride) < 1:
        raise ValueError(f"{name}: stride must be >= 1")
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"{name}: input channels (axis 1) {x.shape[1]} != weight axis 0 {w.shape[0]}")
    out_sp = conv_transpose_output_shape(x.shape[2:], w.shape[2:], stride, pad)
    if min(out_sp) < 1:
        raise ShapeError(f"{name}: empty output extent {out_sp}")
    out_shape = (x.shape[0], w.shape[1]) + out_sp
    out = _conv_input_grad(x.data, w.data, stride, pad, out_shape)
    parents = [x, w]
    if b is not None:
        if b.shape != (w.shape[1],):
            raise ShapeError(f"{name}: bias shape {b.shape} != ({w.shape[1]},)")
        out = out + b.data.reshape((1, -1) + (1,) * nd)
        parents.append(b)

    def backward(g):
        gx = _conv_forward(g, w.data, stride, pad) if x.requires_grad else None
        gw = _conv_weight_grad(g, x.data, stride, pad, w.shape[2:]) if w.requires_grad else None
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0,) + tuple(range(2, 2 + nd))) if b.requires_grad else None)
        return tuple(grads)

    return make_op(out.astype(x.dtype, copy=False), parents, backward)


def conv_transpose2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride=1, pad=0) -> Tensor:
    """Adjoint of :func:`conv2d`: maps ``x[N,K,H,W]`` through ``w[K,C,kh,kw]`` to ``[N,C,H',W']``.

    ``H' = (H - 1) * stride - 2 * pad + kh``.
    """
    return _conv_transposend(x, w, b, stride, pad, 2, "conv_transpose2d")
