"""scikit-learn style wrapper around the network.

The estimator is a thin convenience layer: ``fit`` runs the single-image
RMSprop loop over the given images in turn, ``predict_proba`` returns the
primary saliency map per image and ``predict`` thresholds it.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import objective
from .net import NetConfig, bind_weights, forward, init_weights
from .rng import Rng
from .train import loss_and_grads


def check_images(X) -> np.ndarray:
    """Return ``X`` as float64 ``[N,3,H,W]`` in [0, 1]; a single ``[3,H,W]`` is promoted."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4 or X.shape[1] != 3:
        raise ValueError(f"expected images shaped [N,3,H,W], got {list(X.shape)}")
    if not np.isfinite(X).all():
        raise ValueError("images contain non-finite values")
    if X.min() < 0.0 or X.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    return X


def check_masks(y, X: np.ndarray) -> np.ndarray:
    """Return ``y`` as float64 ``[N,1,H,W]`` matching the images in ``X``."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 2:
        y = y[None, None]
    elif y.ndim == 3:
        y = y[:, None] if y.shape[0] == X.shape[0] and X.shape[0] > 1 else y[None]
    expected = (X.shape[0], 1) + X.shape[2:]
    if y.shape != expected:
        raise ValueError(f"masks shaped {list(y.shape)} do not match images {list(X.shape)}")
    if y.min() < 0.0 or y.max() > 1.0:
        raise ValueError("mask values must lie in [0, 1]")
    return y


class SaliencyEstimator(BaseEstimator):
    """Saliency network with fit / predict / score.

    Parameters
    ----------
    toy : bool
        Use the reduced configuration (4 channels, PCA factors (1, 2)).
    seed : int
        Seed for weight initialisation.
    steps : int
        RMSprop updates performed by :meth:`fit`.
    lr : float
        Learning rate.
    threshold : float
        Cut-off used by :meth:`predict`.
    """

    def __init__(self, toy: bool = True, seed: int = 42, steps: int = 300,
                 lr: float = 1e-4, threshold: float = 0.5):
        self.toy = toy
        self.seed = seed
        self.steps = steps
        self.lr = lr
        self.threshold = threshold

    def _config(self, size: int) -> NetConfig:
        base = NetConfig.toy() if self.toy else NetConfig()
        return base.with_size(size)

    def _check_fitted(self) -> None:
        if not hasattr(self, "weights_"):
            raise NotFittedError("call fit() or set_weights() first")

    def set_weights(self, weights, size: int | None = None) -> "SaliencyEstimator":
        """Adopt existing weights instead of training."""
        cfg = self._config(size or (192 if self.toy else 384))
        self.config_ = cfg
        self.weights_ = bind_weights(weights, cfg)
        self.history_ = []
        return self

    def fit(self, X, y) -> "SaliencyEstimator":
        X = check_images(X)
        y = check_masks(y, X)
        cfg = self._config(X.shape[2])
        cfg.check_input(X.shape[2], X.shape[3])
        weights = init_weights(Rng(self.seed), cfg)
        state = objective.RmsState()
        history = []
        for step in range(self.steps):
            i = step % X.shape[0]
            loss, grads = loss_and_grads(weights, X[i], y[i], cfg)
            history.append(loss.value)
            weights = objective.rmsprop_step(weights, grads, state, lr=self.lr)
        self.config_ = cfg
        self.weights_ = weights
        self.history_ = history
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def predict_proba(self, X) -> np.ndarray:
        """Primary saliency maps, ``[N,1,H,W]`` in [0, 1]."""
        self._check_fitted()
        X = check_images(X)
        cfg = self.config_.with_size(X.shape[2])
        return np.stack([forward(x, self.weights_, cfg).s1.numpy() for x in X])

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X) >= self.threshold).astype(np.float64)

    def score(self, X, y) -> float:
        """Mean adaptive-threshold F-measure of the primary map."""
        X = check_images(X)
        y = check_masks(y, X)
        maps = self.predict_proba(X)
        return float(np.mean([objective.f_measure(s, g).f_beta for s, g in zip(maps, y)]))
