"""Multi-scale detail enhancement for the two low-level features."""

from __future__ import annotations

from typing import Sequence

from . import ops
from .attention import PCA_FACTORS, PSA_FACTORS, pca_forward, pca_shapes, psa_forward, psa_shapes
from .params import Params, Shapes, conv_shapes, prefixed
from .tensor import Tensor

KERNELS = (1, 3, 5, 7)


def mde_shapes(
    channels: int,
    kernels: Sequence[int] = KERNELS,
    psa_factors: Sequence[int] = PSA_FACTORS,
    pca_factors: Sequence[int] = PCA_FACTORS,
) -> Shapes:
    c = channels
    shapes: Shapes = {}
    for i, k in enumerate(kernels, start=1):
        branch: Shapes = {}
        branch.update(conv_shapes("convA", c, c, k))
        branch.update(conv_shapes("inner", c, c, 3))
        branch.update(conv_shapes("convB", c, c, k))
        branch.update(prefixed("psa", psa_shapes(c, psa_factors)))
        branch.update(prefixed("pca", pca_shapes(pca_factors)))
        branch.update(conv_shapes("fuse", c, 2 * c, 3))
        shapes.update(prefixed(f"branch{i}", branch))
    shapes.update(conv_shapes("out", c, len(kernels) * c, 3))
    return shapes


def u_branch(x: Tensor, p: Params) -> Tensor:
    """Down-up residual path: ``Up(fB(f3(Do(fA(x))))) + fA(x)``."""
    _, h, w = x.shape
    a = ops.conv2d(x, p.conv("convA"))
    down = ops.resize_bilinear(a, h // 2, w // 2)
    mid = ops.conv2d(ops.conv2d(down, p.conv("inner")), p.conv("convB"))
    return ops.resize_bilinear(mid, h, w) + a


def mde_forward(
    x: Tensor,
    p: Params,
    n_branches: int = len(KERNELS),
    psa_factors: Sequence[int] = PSA_FACTORS,
    pca_factors: Sequence[int] = PCA_FACTORS,
) -> Tensor:
    refined = []
    for i in range(1, n_branches + 1):
        bp = p.scope(f"branch{i}")
        f = u_branch(x, bp)
        both = ops.concat([
            psa_forward(f, bp.scope("psa"), psa_factors),
            pca_forward(f, bp.scope("pca"), pca_factors),
        ])
        refined.append(ops.conv2d(both, bp.conv("fuse")))
    return ops.conv2d(ops.concat(refined), p.conv("out"))
