"""Differentiable operations used by the networks and losses.

Images are NCHW. Every op returns a new :class:`Tensor`; inputs are never
mutated.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import ShapeError, Tensor, as_tensor

AXES = {"height": 2, "width": 3}


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _lift(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


# -- elementwise -----------------------------------------------------------------

def add(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    return Tensor._make(a.data + b.data, (a, b),
                        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    return Tensor._make(a.data - b.data, (a, b),
                        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    return Tensor._make(a.data * b.data, (a, b),
                        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    out = a.data / b.data

    def bw(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return Tensor._make(out, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    return Tensor._make(-a.data, (a,), lambda g: (-g,))


def power(a: Tensor, p: float) -> Tensor:
    """``a ** p`` for a constant exponent; ``a`` must be positive when ``p`` is fractional."""
    out = a.data ** p
    return Tensor._make(out, (a,), lambda g: (g * p * a.data ** (p - 1),))


def absolute(a: Tensor) -> Tensor:
    return Tensor._make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def maximum(a: Tensor, floor: float) -> Tensor:
    """Elementwise ``max(a, floor)``; the gradient is zero wherever ``a <= floor``."""
    mask = a.data > floor
    out = np.where(mask, a.data, np.asarray(floor, dtype=a.dtype))
    return Tensor._make(out, (a,), lambda g: (np.where(mask, g, 0).astype(g.dtype),))


def leaky_relu(x: Tensor, slope: float = 0.1) -> Tensor:
    """``max(x, slope * x)``; at zero the positive branch's derivative is used."""
    pos = x.data >= 0
    out = np.where(pos, x.data, x.data * slope)
    return Tensor._make(out, (x,), lambda g: (np.where(pos, g, g * slope),))


# -- shape / reduction -----------------------------------------------------------

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return Tensor._make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def total(x: Tensor, axis=None) -> Tensor:
    out = np.asarray(x.data.sum(axis=axis))

    def bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return Tensor._make(out, (x,), bw)


def mean(x: Tensor, axis=None) -> Tensor:
    n = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    out = np.asarray(x.data.mean(axis=axis))

    def bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, x.shape).astype(x.dtype),)

    return Tensor._make(out.astype(x.dtype), (x,), bw)


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    bounds = np.cumsum(sizes)[:-1]
    out = np.concatenate([x.data for x in xs], axis=axis)
    return Tensor._make(out, xs, lambda g: tuple(np.split(g, bounds, axis=axis)))


def stack_scalars(xs: Sequence[Tensor]) -> Tensor:
    return concat([reshape(x, (1,)) for x in xs], axis=0)


def index(x: Tensor, i: int) -> Tensor:
    """Select item ``i`` along the leading axis."""
    def bw(g):
        full = np.zeros_like(x.data)
        full[i] = g
        return (full,)

    return Tensor._make(x.data[i], (x,), bw)


# -- linear maps over the two trailing axes ---------------------------------------

def sep_linear(x: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """``rows @ x @ cols.T`` on the trailing two axes.

    Covers every fixed separable linear filter in the package (Gaussian
    windows, mean pooling, Sinc decimation).
    """
    if rows.shape[1] != x.shape[-2] or cols.shape[1] != x.shape[-1]:
        raise ShapeError(f"operator {rows.shape}/{cols.shape} does not fit input {x.shape}")
    rows = rows.astype(x.dtype, copy=False)
    cols = cols.astype(x.dtype, copy=False)
    out = rows @ x.data @ cols.T
    return Tensor._make(out, (x,), lambda g: (rows.T @ g @ cols,))


def avg_pool2(x: Tensor) -> Tensor:
    """2x2 mean pooling (trailing row/column dropped for odd extents)."""
    h, w = x.shape[-2] // 2, x.shape[-1] // 2
    return sep_linear(x, _pool_matrix(h, x.shape[-2]), _pool_matrix(w, x.shape[-1]))


def _pool_matrix(n_out: int, n_in: int) -> np.ndarray:
    m = np.zeros((n_out, n_in))
    idx = np.arange(n_out)
    m[idx, 2 * idx] = 0.5
    m[idx, 2 * idx + 1] = 0.5
    return m


# -- convolutions ----------------------------------------------------------------

def _conv(x: Tensor, w: Tensor, bias: Tensor | None, kh: int, kw: int) -> Tensor:
    """Zero-padded 'same' cross-correlation; ``w.data`` reshapes to (O, C, kh, kw).

    The padded input is laid out channel-major and flattened, so every kernel
    tap is a single GEMM against a shifted strided view (no im2col copies).
    Positions whose window wraps into the next row or image are computed but
    discarded.
    """
    b, c, h, wd = x.shape
    o = w.shape[0]
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    hp, wp = h + 2 * ph, wd + 2 * pw
    n = b * hp * wp
    taps = [(i, j, i * wp + j) for i in range(kh) for j in range(kw)]
    span = n - taps[-1][2]
    wt = np.ascontiguousarray(w.data.reshape(o, c, kh, kw).transpose(2, 3, 0, 1))  # tap-major
    xf = np.zeros((c, b, hp, wp), x.dtype)
    xf[:, :, ph:ph + h, pw:pw + wd] = x.data.transpose(1, 0, 2, 3)
    xf = xf.reshape(c, n)
    acc = np.zeros((o, n), x.dtype)
    for i, j, off in taps:
        acc[:, :span] += wt[i, j] @ xf[:, off:off + span]
    out = acc.reshape(o, b, hp, wp)[:, :, :h, :wd].transpose(1, 0, 2, 3)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)
    del acc

    def bw(g):
        gf = np.zeros((o, b, hp, wp), g.dtype)
        gf[:, :, :h, :wd] = g.transpose(1, 0, 2, 3)
        gf = gf.reshape(o, n)[:, :span]
        gw = gx = None
        if w.requires_grad:
            gw = np.empty_like(wt)
            for i, j, off in taps:
                gw[i, j] = gf @ xf[:, off:off + span].T
            gw = gw.transpose(2, 3, 0, 1).reshape(w.shape)
        if x.requires_grad:
            gxf = np.zeros((c, n), g.dtype)
            for i, j, off in taps:
                gxf[:, off:off + span] += wt[i, j].T @ gf
            gx = gxf.reshape(c, b, hp, wp)[:, :, ph:ph + h, pw:pw + wd].transpose(1, 0, 2, 3).copy()
        gb = g.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, w, bias) if bias is not None else (x, w)
    return Tensor._make(out, parents, bw)


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None) -> Tensor:
    """Stride-1 2D cross-correlation with zero padding of (k-1)/2.

    x: (B, Cin, H, W); w: (Cout, Cin, k, k) with k odd; bias: (Cout,).
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4D input and weight, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: input has {x.shape[1]} channels, weight expects {w.shape[1]}")
    kh, kw = w.shape[2:]
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f"conv2d needs an odd square kernel, got {kh}x{kw}")
    if bias is not None and bias.shape != (w.shape[0],):
        raise ShapeError(f"bias shape {bias.shape} != ({w.shape[0]},)")
    return _conv(x, w, bias, kh, kw)


def conv1d_axis(x: Tensor, w: Tensor, bias: Tensor | None = None, axis: str = "width") -> Tensor:
    """1D cross-correlation along one spatial axis, mixing channels.

    x: (B, Cin, H, W); w: (Cout, Cin, k) with k odd; ``axis`` is 'height' or 'width'.
    """
    if axis not in AXES:
        raise ValueError(f"axis must be 'height' or 'width', got {axis!r}")
    if x.ndim != 4 or w.ndim != 3:
        raise ShapeError(f"conv1d_axis expects 4D input and 3D weight, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv1d_axis: input has {x.shape[1]} channels, weight expects {w.shape[1]}")
    k = w.shape[2]
    if k % 2 == 0:
        raise ShapeError(f"conv1d_axis needs an odd kernel, got {k}")
    if bias is not None and bias.shape != (w.shape[0],):
        raise ShapeError(f"bias shape {bias.shape} != ({w.shape[0]},)")
    kh, kw = (1, k) if axis == "width" else (k, 1)
    return _conv(x, w, bias, kh, kw)


# -- sub-pixel rearrangement -----------------------------------------------------

def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """(B, C*r*r, H, W) -> (B, C, r*H, r*W) with out[b,c,r*h+i,r*w+j] = x[b,c*r*r+i*r+j,h,w]."""
    b, cr, h, w = x.shape
    if cr % (r * r):
        raise ShapeError(f"pixel_shuffle: {cr} channels not divisible by r^2={r * r}")
    c = cr // (r * r)
    out = x.data.reshape(b, c, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(b, c, h * r, w * r)

    def bw(g):
        return (g.reshape(b, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(x.shape),)

    return Tensor._make(np.ascontiguousarray(out), (x,), bw)


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """Inverse of :func:`pixel_shuffle`."""
    b, c, hr, wr = x.shape
    if hr % r or wr % r:
        raise ShapeError(f"pixel_unshuffle: extents {hr}x{wr} not divisible by {r}")
    h, w = hr // r, wr // r
    out = x.data.reshape(b, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(b, c * r * r, h, w)

    def bw(g):
        return (g.reshape(b, c, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(x.shape),)

    return Tensor._make(np.ascontiguousarray(out), (x,), bw)


# -- operator overloads ----------------------------------------------------------

Tensor.__add__ = lambda self, o: add(self, o)
Tensor.__radd__ = lambda self, o: add(o, self)
Tensor.__sub__ = lambda self, o: sub(self, o)
Tensor.__rsub__ = lambda self, o: sub(o, self)
Tensor.__mul__ = lambda self, o: mul(self, o)
Tensor.__rmul__ = lambda self, o: mul(o, self)
Tensor.__truediv__ = lambda self, o: div(self, o)
Tensor.__rtruediv__ = lambda self, o: div(o, self)
Tensor.__neg__ = lambda self: neg(self)
Tensor.__pow__ = lambda self, p: power(self, p)
