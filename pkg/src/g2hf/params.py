"""Named parameter storage shared by every module.

Weights live in a flat ``{dotted.name: array}`` mapping. Module code reads
them through a :class:`Params` view that prepends its scope, so the same
forward function serves a standalone block and a block nested in the full
network.
"""

from __future__ import annotations

from typing import Mapping

import numpy as np

from .ops import ConvParams
from .tensor import Tensor

Shapes = dict[str, tuple[int, ...]]


def conv_shapes(name: str, c_out: int, c_in: int, k: int) -> Shapes:
    return {f"{name}.weight": (c_out, c_in, k, k), f"{name}.bias": (c_out,)}


def prefixed(prefix: str, shapes: Shapes) -> Shapes:
    return {f"{prefix}.{k}": v for k, v in shapes.items()}


class Params:
    """Scoped read access to a ``{name: Tensor}`` mapping."""

    def __init__(self, tensors: Mapping[str, Tensor], prefix: str = ""):
        self._tensors = tensors
        self._prefix = prefix

    def _full(self, name: str) -> str:
        return f"{self._prefix}.{name}" if self._prefix else name

    def __getitem__(self, name: str) -> Tensor:
        full = self._full(name)
        try:
            return self._tensors[full]
        except KeyError:
            raise KeyError(f"missing parameter {full!r}") from None

    def __contains__(self, name: str) -> bool:
        return self._full(name) in self._tensors

    def scope(self, name: str) -> "Params":
        return Params(self._tensors, self._full(name))

    def conv(self, name: str, stride: int = 1, padding: int | None = None) -> ConvParams:
        return ConvParams(self[f"{name}.weight"], self[f"{name}.bias"], stride, padding)


def as_params(weights: Mapping[str, np.ndarray], trainable: bool = False) -> tuple[Params, dict[str, Tensor]]:
    """Wrap raw arrays as tensors; returns the view and the leaf dict."""
    leaves = {
        k: v if isinstance(v, Tensor) else Tensor(np.asarray(v, dtype=np.float64), trainable, name=k)
        for k, v in weights.items()
    }
    return Params(leaves), leaves


def init_uniform(shapes: Shapes, rng, bias_bound: float = 0.0) -> dict[str, np.ndarray]:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases ~ U(-bias_bound, bias_bound).

    Weight values are rounded to float32 so they survive a weight-file
    round-trip unchanged.
    """
    out: dict[str, np.ndarray] = {}
    for name, shape in shapes.items():
        if name.endswith(".bias"):
            out[name] = rng.uniform(-bias_bound, bias_bound, shape) if bias_bound else np.zeros(shape)
            continue
        bound = 1.0 / np.sqrt(int(np.prod(shape[1:])))
        out[name] = rng.uniform(-bound, bound, shape).astype(np.float32).astype(np.float64)
    return out
