"""Primitive tensor operations with hand-written adjoints.

Spatial operations take ``[C, H, W]`` tensors; ``conv2d`` additionally
accepts a leading batch axis ``[N, C, H, W]`` so that one kernel can be
applied to a stack of slices.

Conventions:

* convolution is cross-correlation with zero padding;
* ``pixel_unshuffle`` maps ``x[c, h*r+dy, w*r+dx]`` to
  ``out[c*r*r + dy*r + dx, h, w]``;
* bilinear resize uses half-pixel centres (align-corners false) and clamps
  source coordinates at the border;
* the channel-max adjoint routes the whole gradient to the first maximal
  channel.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .tensor import DTYPE, ShapeError, Tensor, active_tape, as_tensor

# im2col is used while the patch matrix stays below this many elements;
# larger convolutions loop over kernel taps instead.
_IM2COL_LIMIT = 1 << 22


def _finish(op: str, value: np.ndarray, inputs, adjoint) -> Tensor:
    tape = active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(value, requires_grad=needs)
    if needs:
        tape.record(op, inputs, out, adjoint)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _finish(
        "add", a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _finish(
        "sub", a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _finish(
        "mul", ad * bd, (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _finish(
        "div", out, (a, b),
        lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)),
    )


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(xd))
    s = np.where(xd >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _finish("sigmoid", s, (x,), lambda g: (g * s * (1.0 - s),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _finish("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def log(x: Tensor) -> Tensor:
    xd = x.data
    return _finish("log", np.log(xd), (x,), lambda g: (g / xd,))


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    xd = x.data
    inside = (xd >= lo) & (xd <= hi)
    return _finish("clamp", np.clip(xd, lo, hi), (x,), lambda g: (g * inside,))


def scale(x: Tensor, c: float) -> Tensor:
    return _finish("scale", x.data * c, (x,), lambda g: (g * c,))


# ---------------------------------------------------------------- reductions

def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return _finish(
        "sum", np.asarray(x.data.sum(), dtype=DTYPE).reshape(()), (x,),
        lambda g: (np.broadcast_to(g, shape).copy(),),
    )


def mean_all(x: Tensor) -> Tensor:
    shape, n = x.shape, x.size
    return _finish(
        "mean", np.asarray(x.data.sum() / n, dtype=DTYPE).reshape(()), (x,),
        lambda g: (np.full(shape, float(g) / n),),
    )


# ---------------------------------------------------------------- layout

def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    src = x.shape
    return _finish(
        "reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(src),)
    )


def transpose(x: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _finish(
        "transpose", np.ascontiguousarray(x.data.transpose(axes)), (x,),
        lambda g: (g.transpose(inv),),
    )


def concat(xs, axis: int = 0) -> Tensor:
    xs = [as_tensor(t) for t in xs]
    sizes = [t.shape[axis] for t in xs]
    bounds = np.cumsum(sizes)[:-1]
    return _finish(
        "concat", np.concatenate([t.data for t in xs], axis=axis), xs,
        lambda g: tuple(np.split(g, bounds, axis=axis)),
    )


def channel_slice(x: Tensor, start: int, stop: int) -> Tensor:
    """``x[start:stop]`` along the leading axis."""
    shape = x.shape

    def adjoint(g):
        full = np.zeros(shape, dtype=DTYPE)
        full[start:stop] = g
        return (full,)

    return _finish("slice", x.data[start:stop], (x,), adjoint)


# ---------------------------------------------------------------- matmul

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul dimension mismatch: {list(a.shape)} x {list(b.shape)}"
        )
    ad, bd = a.data, b.data
    return _finish("matmul", ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


# ---------------------------------------------------------------- convolution

@dataclass(frozen=True)
class ConvParams:
    """Convolution weights ``[C_out, C_in, k, k]``, bias ``[C_out]`` and geometry."""

    weight: Tensor
    bias: Tensor
    stride: int = 1
    padding: int | None = None

    @property
    def kernel(self) -> int:
        return self.weight.shape[-1]

    @property
    def pad(self) -> int:
        return (self.kernel - 1) // 2 if self.padding is None else self.padding


def _conv_out(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def _conv_forward(x, w, stride, pad):
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    ho, wo = _conv_out(h, k, stride, pad), _conv_out(wd, k, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    if k == 1 and stride == 1:
        out = np.matmul(np.ascontiguousarray(w[:, :, 0, 0]), xp.reshape(n, c, ho * wo))
        return out.reshape(n, o, ho, wo), xp
    if n * c * k * k * ho * wo <= _IM2COL_LIMIT:
        win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
        win = win[:, :, ::stride, ::stride]  # n c ho wo k k
        cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * k * k, ho * wo)
        out = np.matmul(w.reshape(o, c * k * k), cols)
        return out.reshape(n, o, ho, wo), xp
    out = np.zeros((n, o, ho * wo), dtype=DTYPE)
    taps = np.ascontiguousarray(w.transpose(2, 3, 0, 1))  # BLAS needs contiguous taps
    span_h, span_w = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    for dy in range(k):
        for dx in range(k):
            patch = xp[:, :, dy:dy + span_h:stride, dx:dx + span_w:stride]
            out += np.matmul(taps[dy, dx], patch.reshape(n, c, ho * wo))
    return out.reshape(n, o, ho, wo), xp


def _batched_outer(gf: np.ndarray, pf: np.ndarray) -> np.ndarray:
    """``sum_n gf[n] @ pf[n].T`` for ``[n, o, i]`` and ``[n, c, i]``."""
    n, o, i = gf.shape
    c = pf.shape[1]
    if n == 1:
        return gf[0] @ pf[0].T
    return gf.transpose(1, 0, 2).reshape(o, n * i) @ pf.transpose(1, 0, 2).reshape(c, n * i).T


def _conv_adjoint(g, xp, w, stride, pad, in_shape):
    n, c, h, wd = in_shape
    o, _, k, _ = w.shape
    _, _, ho, wo = g.shape
    gf = g.reshape(n, o, ho * wo)
    if k == 1 and stride == 1:
        xf = xp.reshape(n, c, ho * wo)
        gw = _batched_outer(gf, xf).reshape(o, c, 1, 1)
        gx = np.matmul(np.ascontiguousarray(w[:, :, 0, 0].T), gf).reshape(n, c, h, wd)
        return gx, gw
    gw = np.zeros((k, k, o, c), dtype=DTYPE)
    taps_t = np.ascontiguousarray(w.transpose(2, 3, 1, 0))
    gxp = np.zeros(xp.shape, dtype=DTYPE)
    span_h, span_w = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    for dy in range(k):
        for dx in range(k):
            patch = xp[:, :, dy:dy + span_h:stride, dx:dx + span_w:stride]
            pf = patch.reshape(n, c, ho * wo)
            gw[dy, dx] = _batched_outer(gf, pf)
            gxp[:, :, dy:dy + span_h:stride, dx:dx + span_w:stride] += np.matmul(
                taps_t[dy, dx], gf
            ).reshape(n, c, ho, wo)
    gx = gxp[:, :, pad:pad + h, pad:pad + wd] if pad else gxp
    return gx, gw.transpose(2, 3, 0, 1)


def conv2d(x: Tensor, p: ConvParams) -> Tensor:
    """Zero-padded cross-correlation of ``[C,H,W]`` (or ``[N,C,H,W]``) input."""
    w, b = p.weight, p.bias
    k = w.shape[-1]
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeError(f"conv weight must be [C_out,C_in,k,k], got {list(w.shape)}")
    if k % 2 == 0:
        raise ShapeError(f"kernel parity: kernel size {k} is not odd")
    if p.stride < 1 or p.pad < 0:
        raise ShapeError("stride must be >= 1 and padding >= 0")
    batched = x.ndim == 4
    if x.ndim not in (3, 4):
        raise ShapeError(f"conv2d expects [C,H,W] or [N,C,H,W], got {list(x.shape)}")
    xd = x.data if batched else x.data[None]
    if xd.shape[1] != w.shape[1]:
        raise ShapeError(
            f"channel mismatch: input has {xd.shape[1]} channels, weight expects {w.shape[1]}"
        )
    if xd.shape[2] + 2 * p.pad < k or xd.shape[3] + 2 * p.pad < k:
        raise ShapeError("conv2d input smaller than kernel")
    stride, pad = p.stride, p.pad
    out, xp = _conv_forward(xd, w.data, stride, pad)
    out = out + b.data[None, :, None, None]
    in_shape = xd.shape

    def adjoint(g):
        g4 = g if batched else g[None]
        gx, gw = _conv_adjoint(g4, xp, w.data, stride, pad, in_shape)
        gb = g4.sum(axis=(0, 2, 3))
        return (gx if batched else gx[0]), gw, gb

    return _finish("conv2d", out if batched else out[0], (x, w, b), adjoint)


# ---------------------------------------------------------------- shuffles

def _unshuffle_array(a: np.ndarray, r: int) -> np.ndarray:
    c, h, w = a.shape
    return (
        a.reshape(c, h // r, r, w // r, r)
        .transpose(0, 2, 4, 1, 3)
        .reshape(c * r * r, h // r, w // r)
    )


def _shuffle_array(a: np.ndarray, r: int) -> np.ndarray:
    cr, h, w = a.shape
    c = cr // (r * r)
    return (
        a.reshape(c, r, r, h, w)
        .transpose(0, 3, 1, 4, 2)
        .reshape(c, h * r, w * r)
    )


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """Space-to-depth: ``[C,H,W] -> [r*r*C, H/r, W/r]``."""
    if x.ndim != 3:
        raise ShapeError(f"pixel_unshuffle expects [C,H,W], got {list(x.shape)}")
    if r < 1 or x.shape[1] % r or x.shape[2] % r:
        raise ShapeError(
            f"divisibility: factor {r} does not divide spatial size {list(x.shape[1:])}"
        )
    if r == 1:
        return _finish("unshuffle", x.data, (x,), lambda g: (g,))
    return _finish(
        "unshuffle", _unshuffle_array(x.data, r), (x,),
        lambda g: (_shuffle_array(g, r),),
    )


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Depth-to-space: ``[r*r*C, H, W] -> [C, r*H, r*W]``."""
    if x.ndim != 3:
        raise ShapeError(f"pixel_shuffle expects [C,H,W], got {list(x.shape)}")
    if r < 1 or x.shape[0] % (r * r):
        raise ShapeError(
            f"divisibility: {x.shape[0]} channels not divisible by factor^2 = {r * r}"
        )
    if r == 1:
        return _finish("shuffle", x.data, (x,), lambda g: (g,))
    return _finish(
        "shuffle", _shuffle_array(x.data, r), (x,),
        lambda g: (_unshuffle_array(g, r),),
    )


# ---------------------------------------------------------------- channel pools

def channel_max_pool(x: Tensor) -> Tensor:
    if x.ndim != 3 or x.shape[0] < 1:
        raise ShapeError(f"channel_max_pool expects [C,H,W], got {list(x.shape)}")
    xd = x.data
    idx = np.argmax(xd, axis=0)  # first occurrence on ties
    out = np.take_along_axis(xd, idx[None], axis=0)

    def adjoint(g):
        gx = np.zeros(xd.shape, dtype=DTYPE)
        np.put_along_axis(gx, idx[None], g, axis=0)
        return (gx,)

    return _finish("channel_max", out, (x,), adjoint)


def channel_avg_pool(x: Tensor) -> Tensor:
    if x.ndim != 3 or x.shape[0] < 1:
        raise ShapeError(f"channel_avg_pool expects [C,H,W], got {list(x.shape)}")
    c = x.shape[0]
    shape = x.shape
    return _finish(
        "channel_avg", x.data.sum(axis=0, keepdims=True) / c, (x,),
        lambda g: (np.broadcast_to(g / c, shape).copy(),),
    )


# ---------------------------------------------------------------- resize

@lru_cache(maxsize=256)
def interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """``[n_out, n_in]`` matrix of 1-D linear interpolation weights.

    Half-pixel centres; source coordinates below zero are clamped to zero and
    the upper neighbour is clamped to the last sample.
    """
    m = np.zeros((n_out, n_in), dtype=DTYPE)
    ratio = n_in / n_out
    for i in range(n_out):
        src = max((i + 0.5) * ratio - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        lam = src - i0
        m[i, i0] += 1.0 - lam
        m[i, i1] += lam
    m.setflags(write=False)
    return m


def resize_bilinear(x: Tensor, h_out: int, w_out: int) -> Tensor:
    """Bilinear resize of ``[C,H,W]`` to ``[C,h_out,w_out]``.

    Upsampling then downsampling by the same factor is not an exact
    round-trip.
    """
    if h_out < 1 or w_out < 1:
        raise ShapeError("resize target must be at least 1x1")
    if x.ndim != 3:
        raise ShapeError(f"resize_bilinear expects [C,H,W], got {list(x.shape)}")
    _, h, w = x.shape
    if (h, w) == (h_out, w_out):
        return _finish("resize", x.data, (x,), lambda g: (g,))
    ry, rx = interp_matrix(h, h_out), interp_matrix(w, w_out)
    out = np.matmul(np.matmul(ry, x.data), rx.T)
    return _finish(
        "resize", out, (x,), lambda g: (np.matmul(np.matmul(ry.T, g), rx),)
    )
