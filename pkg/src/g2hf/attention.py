"""Pyramid spatial attention (PSA) and pyramid channel attention (PCA).

Both blocks rearrange the input at several unshuffle factors, weight each
rearranged copy by a map built from its channel-wise max and mean, add the
copy back as a residual, shuffle back and merge with a 3x3 convolution.
The weight map is used raw, without a sigmoid.
"""

from __future__ import annotations

import math
from typing import Sequence

from . import ops
from .params import Params, Shapes, conv_shapes
from .tensor import ShapeError, Tensor

PSA_FACTORS = (1, 2, 4, 6)
PCA_FACTORS = (1, 2, 4)


def psa_shapes(channels: int, factors: Sequence[int] = PSA_FACTORS) -> Shapes:
    shapes: Shapes = {}
    for j, _ in enumerate(factors):
        shapes.update(conv_shapes(f"fuse{j}", 1, 2, 1))
    shapes.update(conv_shapes("merge", channels, len(factors) * channels, 3))
    return shapes


def pca_shapes(factors: Sequence[int] = PCA_FACTORS) -> Shapes:
    shapes: Shapes = {}
    for j, _ in enumerate(factors):
        shapes.update(conv_shapes(f"fuse{j}", 1, 2, 1))
    shapes.update(conv_shapes("merge", 1, len(factors), 3))
    return shapes


def refine(u: Tensor, fuse: ops.ConvParams) -> Tensor:
    """``f1(cat(max(u), avg(u))) * u + u`` with the map broadcast over channels."""
    pooled = ops.concat([ops.channel_max_pool(u), ops.channel_avg_pool(u)])
    weight = ops.conv2d(pooled, fuse)
    return u * weight + u


def psa_forward(x: Tensor, p: Params, factors: Sequence[int] = PSA_FACTORS) -> Tensor:
    """Pyramid spatial attention; shape-preserving on ``[C,H,W]``."""
    _, h, w = x.shape
    bad = [r for r in factors if h % r or w % r]
    if bad:
        raise ShapeError(
            f"psa divisibility: factors {bad} do not divide spatial size {h}x{w}"
        )
    branches = []
    for j, r in enumerate(factors):
        u = ops.pixel_unshuffle(x, r)
        branches.append(ops.pixel_shuffle(refine(u, p.conv(f"fuse{j}")), r))
    return ops.conv2d(ops.concat(branches), p.conv("merge"))


def channel_grid(channels: int) -> int:
    k = math.isqrt(channels)
    if k * k != channels:
        raise ShapeError(f"channel grid: {channels} channels is not a perfect square")
    return k


def pca_forward(x: Tensor, p: Params, factors: Sequence[int] = PCA_FACTORS) -> Tensor:
    """Pyramid channel attention; shape-preserving on ``[C,H,W]``.

    Channels are laid out on a ``K x K`` grid (``K*K == C``) per pixel and the
    spatial machinery of PSA runs on that grid, with the ``E = H*W`` pixels
    playing the role of channels. The merge is one 3->1 convolution shared
    by all pixels.
    """
    c, h, w = x.shape
    k = channel_grid(c)
    bad = [r for r in factors if k % r]
    if bad:
        raise ShapeError(f"pca factors {bad} do not divide channel grid side {k}")
    e = h * w
    grid = ops.reshape(ops.transpose(ops.reshape(x, (c, e))), (e, k, k))
    stacked = []
    for j, r in enumerate(factors):
        u = ops.pixel_unshuffle(grid, r)
        d = ops.pixel_shuffle(refine(u, p.conv(f"fuse{j}")), r)
        stacked.append(ops.reshape(d, (e, 1, k, k)))
    merged = ops.conv2d(ops.concat(stacked, axis=1), p.conv("merge"))
    return ops.reshape(ops.transpose(ops.reshape(merged, (e, c))), (c, h, w))
