"""Dual-branch geo-gran complementary module for the mid-level features.

The expanded input is split by channel index: the first half feeds the
granular (detail) branch, the second half the geometric (position) branch.
"""

from __future__ import annotations

import math
from typing import Sequence

from . import ops
from .attention import PCA_FACTORS, PSA_FACTORS, pca_forward, pca_shapes, psa_forward, psa_shapes
from .mde import KERNELS
from .params import Params, Shapes, conv_shapes, prefixed
from .tensor import ShapeError, Tensor

GEO_FACTORS = (1, 2, 4)


def location_sensing_shapes(channels: int) -> Shapes:
    shapes: Shapes = {}
    for name in ("q", "k", "v"):
        shapes.update(conv_shapes(name, channels, channels, 1))
    return shapes


def location_sensing(x: Tensor, p: Params, scaled: bool = False) -> Tensor:
    """Channel-affinity attention with no softmax.

    ``M = k_hat @ q_hat`` is ``[C, C]`` and the output is ``v_hat @ M``
    reshaped back to ``[C, H, W]``. With ``scaled`` the affinity map is
    divided by ``sqrt(C)``.
    """
    c, h, w = x.shape
    n = h * w
    q = ops.transpose(ops.reshape(ops.conv2d(x, p.conv("q")), (c, n)))
    k = ops.reshape(ops.conv2d(x, p.conv("k")), (c, n))
    v = ops.transpose(ops.reshape(ops.conv2d(x, p.conv("v")), (c, n)))
    m = ops.matmul(k, q)
    if scaled:
        m = ops.scale(m, 1.0 / math.sqrt(c))
    out = ops.matmul(v, m)
    return ops.reshape(ops.transpose(out), (c, h, w))


def affinity_map(x: Tensor, p: Params) -> Tensor:
    """The ``[C, C]`` response map that :func:`location_sensing` applies."""
    c, h, w = x.shape
    q = ops.transpose(ops.reshape(ops.conv2d(x, p.conv("q")), (c, h * w)))
    k = ops.reshape(ops.conv2d(x, p.conv("k")), (c, h * w))
    return ops.matmul(k, q)


def granular_shapes(channels: int, kernels: Sequence[int] = KERNELS) -> Shapes:
    shapes: Shapes = {}
    for j, k in enumerate(kernels):
        shapes.update(conv_shapes(f"conv{j}", channels, channels, k))
    shapes.update(conv_shapes("merge", channels, len(kernels) * channels, 1))
    return shapes


def granular_branch(x: Tensor, p: Params, n_convs: int = len(KERNELS)) -> Tensor:
    """Cascade of growing kernels, each fed the input plus the previous output."""
    outs = [ops.conv2d(x, p.conv("conv0"))]
    for j in range(1, n_convs):
        outs.append(ops.conv2d(x + outs[-1], p.conv(f"conv{j}")))
    return ops.conv2d(ops.concat(outs), p.conv("merge"))


def geometric_shapes(channels: int, factors: Sequence[int] = GEO_FACTORS) -> Shapes:
    shapes: Shapes = {}
    for j, r in enumerate(factors):
        shapes.update(prefixed(f"ls{j}", location_sensing_shapes(channels * r * r)))
    shapes.update(conv_shapes("merge", channels, len(factors) * channels, 3))
    return shapes


def geometric_branch(
    x: Tensor, p: Params, factors: Sequence[int] = GEO_FACTORS, scaled: bool = False
) -> Tensor:
    _, h, w = x.shape
    bad = [r for r in factors if h % r or w % r]
    if bad:
        raise ShapeError(
            f"divisibility: geometric factors {bad} do not divide spatial size {h}x{w}"
        )
    parts = []
    for j, r in enumerate(factors):
        u = ops.pixel_unshuffle(x, r)
        parts.append(ops.pixel_shuffle(location_sensing(u, p.scope(f"ls{j}"), scaled), r))
    return ops.conv2d(ops.concat(parts), p.conv("merge"))


def interaction_weight(fs: Tensor, fd: Tensor, conv: ops.ConvParams) -> Tensor:
    """Single-channel gate ``sigmoid(f1(cat(fs, fd)))`` with values in (0, 1)."""
    return ops.sigmoid(ops.conv2d(ops.concat([fs, fd]), conv))


def geo_gran_interaction(fs: Tensor, fd: Tensor, p: Params) -> tuple[Tensor, Tensor]:
    if fs.shape != fd.shape:
        raise ShapeError(
            f"interaction inputs differ in shape: {list(fs.shape)} vs {list(fd.shape)}"
        )
    wmap = interaction_weight(fs, fd, p.conv("interact"))
    return fs * wmap + fs, fd * wmap + fd


def dgc_shapes(
    channels: int,
    kernels: Sequence[int] = KERNELS,
    psa_factors: Sequence[int] = PSA_FACTORS,
    pca_factors: Sequence[int] = PCA_FACTORS,
    geo_factors: Sequence[int] = GEO_FACTORS,
) -> Shapes:
    c = channels
    shapes: Shapes = {}
    shapes.update(conv_shapes("expand", 2 * c, c, 3))
    shapes.update(prefixed("granular", granular_shapes(c, kernels)))
    shapes.update(prefixed("geometric", geometric_shapes(c, geo_factors)))
    shapes.update(conv_shapes("interact", 1, 2 * c, 1))
    shapes.update(conv_shapes("sde", c, 2 * c, 3))
    shapes.update(prefixed("psa", psa_shapes(c, psa_factors)))
    shapes.update(prefixed("pca", pca_shapes(pca_factors)))
    shapes.update(conv_shapes("post", c, 2 * c, 3))
    return shapes


def dgc_parts(
    x: Tensor,
    p: Params,
    n_convs: int = len(KERNELS),
    psa_factors: Sequence[int] = PSA_FACTORS,
    pca_factors: Sequence[int] = PCA_FACTORS,
    geo_factors: Sequence[int] = GEO_FACTORS,
    scaled: bool = False,
) -> tuple[Tensor, Tensor]:
    """Return ``(F_sde, attention_term)``; the module output is their sum."""
    c = x.shape[0]
    expanded = ops.conv2d(x, p.conv("expand"))
    fd = granular_branch(ops.channel_slice(expanded, 0, c), p.scope("granular"), n_convs)
    fs = geometric_branch(
        ops.channel_slice(expanded, c, 2 * c), p.scope("geometric"), geo_factors, scaled
    )
    fse, fde = geo_gran_interaction(fs, fd, p)
    sde = ops.conv2d(ops.concat([fse, fde]), p.conv("sde"))
    attn = ops.concat([
        pca_forward(sde, p.scope("pca"), pca_factors),
        psa_forward(sde, p.scope("psa"), psa_factors),
    ])
    return sde, ops.conv2d(attn, p.conv("post"))


def dgc_forward(x: Tensor, p: Params, **kwargs) -> Tensor:
    sde, term = dgc_parts(x, p, **kwargs)
    return sde + term
