"""Scikit-learn style front end for U-Net segmentation training."""
from __future__ import annotations

import logging
import math
import time

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_array

from .errors import DivergedLoss
from .nn.functional import log_softmax, softmax_cross_entropy
from .nn.optim import AdamState, adam_step
from .nn.tensor import Tensor
from .seeding import make_rng
from .unet import UNetArch, UNetModel, build_unet

log = logging.getLogger(__name__)


def check_images(X, name="X") -> np.ndarray:
    """Accept ``(N, H, W)`` or ``(N, 1, H, W)``; return float32 ``(N, 1, H, W)``."""
    X = check_array(X, allow_nd=True, ensure_2d=False, dtype=np.float32, input_name=name)
    if X.ndim == 3:
        X = X[:, None]
    if X.ndim != 4 or X.shape[1] != 1:
        raise ValueError(f"{name} must have shape (N, H, W) or (N, 1, H, W), got {X.shape}")
    return X


def check_masks(y, X, n_classes) -> np.ndarray:
    y = np.asarray(y)
    if y.shape != (X.shape[0],) + X.shape[2:]:
        raise ValueError(f"masks {y.shape} do not match images {X.shape}")
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise ValueError(f"mask values must lie in [0, {n_classes})")
    return y.astype(np.int64)


class UNetSegmenter(ClassifierMixin, BaseEstimator):
    """Per-pixel classifier: mini-batch ADAM on softmax cross-entropy.

    ``random_state`` seeds the He initialisation and ``shuffle_seed`` (default
    ``random_state``) the per-epoch batch order, so ``fit`` is deterministic.
    ``stop_below``, when set, ends training once an epoch's mean train loss
    drops under it.
    """

    def __init__(self, n_classes=4, base_width=16, epochs=100, batch_size=8, learning_rate=1e-3,
                 random_state=0, shuffle_seed=None, stop_below=None, verbose=0):
        self.n_classes = n_classes
        self.base_width = base_width
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.random_state = random_state
        self.shuffle_seed = shuffle_seed
        self.stop_below = stop_below
        self.verbose = verbose

    def _arch(self):
        return UNetArch(base_width=self.base_width, out_channels=self.n_classes)

    def fit(self, X, y, X_val=None, y_val=None, callback=None):
        X = check_images(X)
        y = check_masks(y, X, self.n_classes)
        if X_val is not None and len(X_val):
            X_val = check_images(X_val, "X_val")
            y_val = check_masks(y_val, X_val, self.n_classes)
        else:
            X_val = y_val = None
        self.model_ = build_unet(self._arch(), self.random_state)
        self.classes_ = np.arange(self.n_classes)
        self.history_ = {"train_loss": [], "val_loss": [], "epoch_seconds": []}
        seed = self.random_state if self.shuffle_seed is None else self.shuffle_seed
        rng = make_rng("batch-order", int(seed))
        state = AdamState(lr=self.learning_rate)
        params = self.model_.arrays()
        for epoch in range(self.epochs):
            t0 = time.perf_counter()
            order = rng.permutation(len(X))
            total, count = 0.0, 0
            for start in range(0, len(X), self.batch_size):
                idx = order[start:start + self.batch_size]
                self.model_.zero_grad()
                loss = softmax_cross_entropy(self.model_(Tensor(X[idx])), y[idx])
                loss.backward()
                value = loss.item()
                if not math.isfinite(value):
                    raise DivergedLoss(f"non-finite training loss at epoch {epoch}")
                adam_step(state, params, {k: p.grad for k, p in self.model_.params.items()})
                total += value * len(idx)
                count += len(idx)
            train_loss = total / count
            val_loss = self.loss(X_val, y_val) if X_val is not None else float("nan")
            self.history_["train_loss"].append(train_loss)
            self.history_["val_loss"].append(val_loss)
            self.history_["epoch_seconds"].append(time.perf_counter() - t0)
            if self.verbose:
                log.info("epoch %3d  train %.5f  val %.5f  (%.1fs)", epoch + 1, train_loss, val_loss,
                         self.history_["epoch_seconds"][-1])
            if callback is not None:
                callback(epoch, train_loss, val_loss)
            if self.stop_below is not None and train_loss < self.stop_below:
                break
        self.model_.zero_grad()
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("UNetSegmenter is not fitted yet")

    def loss(self, X, y) -> float:
        """Mean pixel cross-entropy of the current model on ``(X, y)``."""
        self._check_fitted()
        X = check_images(X)
        y = check_masks(y, X, self.n_classes)
        total = 0.0
        for start in range(0, len(X), self.batch_size):
            logits = self.model_.forward(Tensor(X[start:start + self.batch_size])).data
            logp = log_softmax(logits)
            t = y[start:start + self.batch_size][:, None]
            total -= float(np.take_along_axis(logp, t, axis=1).sum(dtype=np.float64))
        return total / y.size

    def predict_proba(self, X) -> np.ndarray:
        self._check_fitted()
        return np.exp(log_softmax(self.model_.predict_logits(check_images(X), self.batch_size)))

    def predict(self, X) -> np.ndarray:
        self._check_fitted()
        return self.model_.predict(check_images(X), self.batch_size)

    def score(self, X, y, sample_weight=None) -> float:
        """Mean per-pixel accuracy."""
        pred = self.predict(X)
        return float(np.mean(pred == np.asarray(y)))

    @classmethod
    def from_model(cls, model: UNetModel, **params) -> UNetSegmenter:
        est = cls(n_classes=model.arch.out_channels, base_width=model.arch.base_width, **params)
        est.model_ = model
        est.classes_ = np.arange(model.arch.out_channels)
        return est
