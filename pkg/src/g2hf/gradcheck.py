"""Central finite-difference comparison against tape gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .rng import Rng
from .tensor import Tape, Tensor

FD_STEP = 1e-6
REL_TOL = 1e-4


@dataclass(frozen=True)
class GradCheckResult:
    max_rel_error: float
    worst: tuple[str, int]
    n_coords: int
    finite: bool = True

    @property
    def ok(self) -> bool:
        return self.finite and self.max_rel_error < REL_TOL


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / (abs(numeric) + 1e-8)


def gradcheck(
    fn: Callable[[Mapping[str, Tensor]], Tensor],
    arrays: Mapping[str, np.ndarray],
    rng: Rng,
    n_coords: int = 64,
    h: float = FD_STEP,
    wrt: list[str] | None = None,
) -> GradCheckResult:
    """Compare ``d fn / d arrays`` from the tape with central differences.

    ``fn`` maps named tensors to a scalar tensor. ``n_coords`` coordinates
    are drawn uniformly over all elements of the arrays named in ``wrt``
    (default: all of them).
    """
    names = list(arrays) if wrt is None else list(wrt)
    leaves = {k: Tensor(np.asarray(v, dtype=np.float64), requires_grad=k in names, name=k)
              for k, v in arrays.items()}
    with Tape() as tape:
        loss = fn(leaves)
        grads = dict(zip(names, tape.gradient(loss, [leaves[k] for k in names])))
    if not np.isfinite(loss.data).all():
        return GradCheckResult(float("nan"), ("loss", 0), 0, finite=False)

    sizes = np.array([arrays[k].size for k in names])
    flat = rng.integers(int(sizes.sum()), (n_coords,))
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst, worst_err = ("", -1), 0.0
    for f in flat:
        j = int(np.searchsorted(offsets, f, side="right") - 1)
        name, idx = names[j], int(f - offsets[j])
        base = np.asarray(arrays[name], dtype=np.float64)
        vals = []
        for sign in (1.0, -1.0):
            bumped = base.copy()
            bumped.reshape(-1)[idx] += sign * h
            args = dict(leaves)
            args[name] = Tensor(bumped)
            vals.append(fn(args).item())
        numeric = (vals[0] - vals[1]) / (2 * h)
        analytic = float(grads[name].reshape(-1)[idx])
        if not (np.isfinite(numeric) and np.isfinite(analytic)):
            return GradCheckResult(float("nan"), (name, idx), n_coords, finite=False)
        err = relative_error(analytic, numeric)
        if err > worst_err or worst[1] < 0:
            worst, worst_err = (name, idx), err
    return GradCheckResult(worst_err, worst, n_coords)


def projected(out: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar ``sum(out * weights)``: a generic probe loss for tensor outputs."""
    from . import ops
    return ops.sum_all(out * weights)
