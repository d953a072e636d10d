"""Scikit-learn style wrapper around the trainer.

The estimator follows sklearn conventions (constructor stores
hyperparameters verbatim, ``fit`` returns self, fitted state carries a
trailing underscore, ``get_params``/``set_params`` come from
BaseEstimator) so it composes with ``clone`` and parameter search
tooling. X is a FeatureBank rather than a flat 2-D array because each
sample is a (global vector, spatial token matrix, label) triple.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .bank import ClassEmbeddings, FeatureBank
from .matching import DEFAULT_LOGIT_SCALE, accuracy, predict, vt_logits
from .trainer import TrainConfig, refined_rows, thread_count, train


class VTClassifier(BaseEstimator):
    """Few-shot classifier over frozen feature banks.

    Parameters
    ----------
    n_shots : int, training images per class (one of 1, 2, 4, 8, 16).
    batch_size, lr, momentum, epochs, schedule, seed : optimizer settings.
    heads, layers : attention head count and stacked block count.

    Attributes
    ----------
    params_ : trained head parameters.
    report_ : TrainReport from the fitting run.
    classes_ : ndarray of class indices.
    """

    def __init__(
        self,
        n_shots: int = 16,
        batch_size: int = 32,
        lr: float = 2e-3,
        momentum: float = 0.9,
        epochs: int = 200,
        schedule: str = "cosine",
        seed: int = 0,
        heads: int = 8,
        layers: int = 1,
    ):
        self.n_shots = n_shots
        self.batch_size = batch_size
        self.lr = lr
        self.momentum = momentum
        self.epochs = epochs
        self.schedule = schedule
        self.seed = seed
        self.heads = heads
        self.layers = layers

    def _config(self) -> TrainConfig:
        return TrainConfig(
            n_shots=self.n_shots,
            batch_size=self.batch_size,
            lr=self.lr,
            momentum=self.momentum,
            epochs=self.epochs,
            schedule=self.schedule,
            seed=self.seed,
            heads=self.heads,
            layers=self.layers,
        )

    def fit(self, X: FeatureBank, texts: ClassEmbeddings) -> "VTClassifier":
        X.validate()
        texts.validate()
        self.params_, self.report_ = train(X, texts, self._config())
        self.texts_ = texts
        self.classes_ = np.arange(X.num_classes)
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "params_"):
            raise RuntimeError("estimator is not fitted; call fit first")

    def decision_function(self, X: FeatureBank) -> np.ndarray:
        self._check_fitted()
        rows = refined_rows(X, self.texts_.rows, self.params_, thread_count())
        return vt_logits(X.global_features, rows, DEFAULT_LOGIT_SCALE).scores

    def predict(self, X: FeatureBank) -> np.ndarray:
        self._check_fitted()
        rows = refined_rows(X, self.texts_.rows, self.params_, thread_count())
        return predict(vt_logits(X.global_features, rows, DEFAULT_LOGIT_SCALE))

    def score(self, X: FeatureBank, y: np.ndarray | None = None) -> float:
        truth = X.labels if y is None else np.asarray(y)
        return accuracy(self.predict(X), truth)
