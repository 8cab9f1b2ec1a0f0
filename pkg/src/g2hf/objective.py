"""Hybrid saliency loss, evaluation metrics and the RMSprop optimizer."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import ops
from .tensor import ShapeError, Tensor, as_tensor

BCE_EPS = 1e-7
RATIO_EPS = 1e-8
BETA2 = 0.3


def _check_pair(s: Tensor, g: Tensor) -> None:
    if s.shape != g.shape:
        raise ShapeError(f"prediction {list(s.shape)} and ground truth {list(g.shape)} differ")


def bce_loss(s, g) -> Tensor:
    """Per-pixel mean binary cross-entropy on ``clamp(s, 1e-7, 1 - 1e-7)``."""
    s, g = as_tensor(s), as_tensor(g)
    _check_pair(s, g)
    sc = ops.clamp(s, BCE_EPS, 1.0 - BCE_EPS)
    ll = g * ops.log(sc) + (1.0 - g) * ops.log(1.0 - sc)
    return -ops.mean_all(ll)


def iou_loss(s, g) -> Tensor:
    """``1 - sum(s*g) / (sum(s + g - s*g) + 1e-8)``; 0 when both maps are empty."""
    s, g = as_tensor(s), as_tensor(g)
    _check_pair(s, g)
    inter = ops.sum_all(s * g)
    union = ops.sum_all(s + g - s * g)
    if not union.data.any():
        return ops.scale(union, 0.0)
    return 1.0 - inter / (union + RATIO_EPS)


def fm_loss(s, g, beta2: float = BETA2) -> Tensor:
    """Soft F-measure loss from differentiable TP/FP/FN counts."""
    s, g = as_tensor(s), as_tensor(g)
    _check_pair(s, g)
    tp = ops.sum_all(s * g)
    fp = ops.sum_all(s * (1.0 - g))
    fn = ops.sum_all((1.0 - s) * g)
    h = beta2 * (tp + fn) + (tp + fp)
    return 1.0 - (1.0 + beta2) * tp / (h + RATIO_EPS)


@dataclass
class LossBreakdown:
    """Batch-averaged loss terms summed over the supervised outputs.

    ``per_output`` holds ``(bce, iou, fm)`` per head, averaged over the batch.
    ``total`` stays on the tape for backward; ``total.item()`` equals
    ``bce + iou + fm`` exactly.
    """

    bce: float
    iou: float
    fm: float
    total: Tensor
    per_output: list[tuple[float, float, float]] = field(default_factory=list)

    @property
    def value(self) -> float:
        return self.total.item()


def total_loss(batch: Sequence[tuple[Sequence, object]], beta2: float = BETA2) -> LossBreakdown:
    """Deep-supervision loss averaged over a batch of ``(outputs, gt)`` pairs."""
    if not batch:
        raise ValueError("total_loss needs a non-empty batch")
    n = len(batch)
    sums = [None, None, None]
    heads: list[np.ndarray] = []
    for outputs, gt in batch:
        gt = as_tensor(gt)
        rows = []
        for s in outputs:
            terms = (bce_loss(s, gt), iou_loss(s, gt), fm_loss(s, gt, beta2))
            rows.append([t.item() for t in terms])
            for j, t in enumerate(terms):
                sums[j] = t if sums[j] is None else sums[j] + t
        heads.append(np.array(rows))
    bce, iou, fm = (ops.scale(t, 1.0 / n) for t in sums)
    total = bce + iou + fm
    per_output = [tuple(row) for row in np.mean(heads, axis=0)]
    return LossBreakdown(bce.item(), iou.item(), fm.item(), total, per_output)


# ---------------------------------------------------------------- metrics

@dataclass(frozen=True)
class EvalResult:
    mae: float
    f_beta: float
    threshold: float


def _arrays(s, g) -> tuple[np.ndarray, np.ndarray]:
    s = s.data if isinstance(s, Tensor) else np.asarray(s, dtype=np.float64)
    g = g.data if isinstance(g, Tensor) else np.asarray(g, dtype=np.float64)
    if s.shape != g.shape:
        raise ShapeError(f"prediction {list(s.shape)} and ground truth {list(g.shape)} differ")
    return s, g


def mae_metric(s, g) -> float:
    s, g = _arrays(s, g)
    return float(np.mean(np.abs(s - g)))


def f_measure(s, g, beta2: float = BETA2) -> EvalResult:
    """Adaptive-threshold F-measure.

    ``s`` is binarised as ``s >= t`` with ``t = min(1, 2*mean(s))``; an
    all-zero map predicts nothing. Precision, recall and F with a zero
    denominator count as 0.
    """
    s, g = _arrays(s, g)
    t = min(1.0, 2.0 * float(s.mean()))
    pred = (s >= t) & (s > 0)
    truth = g > 0.5
    tp = float(np.count_nonzero(pred & truth))
    fp = float(np.count_nonzero(pred & ~truth))
    fn = float(np.count_nonzero(~pred & truth))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    denom = beta2 * precision + recall
    f = (1.0 + beta2) * precision * recall / denom if denom else 0.0
    return EvalResult(mae=float(np.mean(np.abs(s - g))), f_beta=f, threshold=t)


# ---------------------------------------------------------------- optimizer

@dataclass
class RmsState:
    acc: dict[str, np.ndarray] = field(default_factory=dict)
    mom: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def rmsprop_step(
    weights: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: RmsState,
    lr: float = 1e-4,
    alpha: float = 0.9,
    momentum: float = 0.9,
    eps: float = 1e-8,
) -> dict[str, np.ndarray]:
    """One RMSprop update; returns new weights and advances ``state`` in place.

    ``acc = alpha*acc + (1-alpha)*g**2``; ``m = momentum*m + g/sqrt(acc+eps)``;
    ``w = w - lr*m``. Parameters without a gradient are carried over.
    """
    out = {}
    for name, w in weights.items():
        g = grads.get(name)
        if g is None:
            out[name] = w
            continue
        if np.shape(g) != np.shape(w):
            raise ShapeError(f"gradient shape {list(np.shape(g))} != weight shape {list(np.shape(w))} for {name}")
        acc = state.acc.get(name)
        acc = (1.0 - alpha) * g * g if acc is None else alpha * acc + (1.0 - alpha) * g * g
        step = g / np.sqrt(acc + eps)
        mom = state.mom.get(name)
        mom = step if mom is None else momentum * mom + step
        state.acc[name] = acc
        state.mom[name] = mom
        out[name] = w - lr * mom
    state.step += 1
    return out


def lr_schedule(epoch: int, base: float = 1e-4, decay: float = 0.7,
                start: int = 30, every: int = 12) -> float:
    """Constant ``base`` until ``start``, then times ``decay`` at start, start+every, ..."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    if epoch < start:
        return base
    return base * decay ** (1 + (epoch - start) // every)
