"""Deep semantic perception on the top feature and the top-down LGF decoder."""

from __future__ import annotations

from typing import Sequence

from . import ops
from .dgc import location_sensing, location_sensing_shapes
from .params import Params, Shapes, conv_shapes, prefixed
from .tensor import ShapeError, Tensor


def dsp_shapes(channels: int) -> Shapes:
    return location_sensing_shapes(channels)


def dsp_forward(f5: Tensor, p: Params, scaled: bool = False) -> Tensor:
    """Location sensing at full scale, no unshuffling."""
    return location_sensing(f5, p, scaled)


def lgf_shapes(channels: int) -> Shapes:
    return {**conv_shapes("gate_low", channels, channels, 3),
            **conv_shapes("gate_high", channels, channels, 3)}


def lgf_forward(f_low: Tensor, f_high: Tensor, p: Params) -> Tensor:
    """Fuse a fine feature with the coarser one above it.

    The high feature is first resized to the low feature's grid; the gates
    are residual 3x3 convolutions and the output is
    ``gate_high(up) * gate_low(low) + up``.
    """
    if f_low.shape[0] != f_high.shape[0]:
        raise ShapeError(
            f"channel mismatch: low has {f_low.shape[0]}, high has {f_high.shape[0]}"
        )
    _, h, w = f_low.shape
    if f_high.shape[1] > h or f_high.shape[2] > w:
        raise ShapeError("high-level feature must not be finer than the low-level one")
    up = ops.resize_bilinear(f_high, h, w)
    low_g = ops.conv2d(f_low, p.conv("gate_low")) + f_low
    high_g = ops.conv2d(up, p.conv("gate_high")) + up
    return high_g * low_g + up


def decoder_shapes(channels: int, levels: int = 5) -> Shapes:
    shapes: Shapes = {}
    for i in range(1, levels):
        shapes.update(prefixed(f"lgf{i}", lgf_shapes(channels)))
    return shapes


def decode(features: Sequence[Tensor], p: Params) -> list[Tensor]:
    """Top-down chain: ``D_top = features[-1]``, ``D_i = lgf(features[i], D_{i+1})``.

    Returns the decoder features finest first.
    """
    if not features:
        raise ShapeError("decode needs at least one feature")
    c = features[0].shape[0]
    if any(f.shape[0] != c for f in features):
        raise ShapeError("channel mismatch across decoder inputs")
    out = [features[-1]]
    for i in range(len(features) - 1, 0, -1):
        out.append(lgf_forward(features[i - 1], out[-1], p.scope(f"lgf{i}")))
    return out[::-1]
