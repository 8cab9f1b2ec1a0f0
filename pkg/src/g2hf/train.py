"""Single-image overfit loop and the synthetic square fixture."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import objective
from .net import ModelWeights, NetConfig, forward_params
from .params import as_params
from .tensor import Tape, Tensor

LOG_FIELDS = ("step", "bce", "iou", "fm", "total")


def synthetic_pair(size: int = 192, square: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Grey image with a brighter centred square, and the square's binary mask."""
    lo = (size - square) // 2
    mask = np.zeros((1, size, size))
    mask[:, lo:lo + square, lo:lo + square] = 1.0
    image = np.repeat(0.25 + 0.5 * mask, 3, axis=0)
    return image, mask


@dataclass
class StepLog:
    step: int
    bce: float
    iou: float
    fm: float
    total: float

    def csv(self) -> str:
        return f"{self.step},{self.bce!r},{self.iou!r},{self.fm!r},{self.total!r}"


@dataclass
class TrainResult:
    weights: ModelWeights
    history: list[StepLog] = field(default_factory=list)


def loss_and_grads(
    weights: Mapping[str, np.ndarray], image: np.ndarray, mask: np.ndarray, cfg: NetConfig
) -> tuple[objective.LossBreakdown, dict[str, np.ndarray]]:
    p, leaves = as_params(weights, trainable=True)
    with Tape() as tape:
        out = forward_params(Tensor(image), p, cfg)
        loss = objective.total_loss([(out.maps, mask)])
        grads = tape.backward(loss.total)
    return loss, {k: grads[k] for k in leaves if k in grads}


def train(
    weights: Mapping[str, np.ndarray],
    image: np.ndarray,
    mask: np.ndarray,
    cfg: NetConfig,
    steps: int,
    lr: float | Callable[[int], float] = 1e-4,
    log: Callable[[StepLog], None] | None = None,
) -> TrainResult:
    """Run ``steps`` RMSprop updates on one image/mask pair.

    ``lr`` is a constant or a function of the step index. Row ``k`` of the
    history is the loss evaluated *before* update ``k``.
    """
    if mask.shape != (1,) + image.shape[1:]:
        raise ValueError(f"mask {list(mask.shape)} does not match image {list(image.shape)}")
    cfg.check_input(image.shape[1], image.shape[2])
    state = objective.RmsState()
    current = dict(weights)
    result = TrainResult(current)
    for step in range(steps):
        loss, grads = loss_and_grads(current, image, mask, cfg)
        entry = StepLog(step, loss.bce, loss.iou, loss.fm, loss.value)
        result.history.append(entry)
        if log is not None:
            log(entry)
        if not np.isfinite(entry.total):
            raise FloatingPointError(f"non-finite loss at step {step}")
        rate = lr(step) if callable(lr) else lr
        current = objective.rmsprop_step(current, grads, state, lr=rate)
    result.weights = current
    return result
