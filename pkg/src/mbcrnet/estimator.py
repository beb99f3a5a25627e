"""scikit-learn compatible front ends for preprocessing and classification."""

from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted

from .data import fit_length, map_label, preprocess
from .model import CANONICAL_LEADS, build_model, profile_spec
from .train import TrainConfig, decide, predict_proba, train


class EcgPreprocessor(TransformerMixin, BaseEstimator):
    """Turn :class:`~mbcrnet.data.EcgRecord` objects into ``[N, 8, rate*seconds]`` arrays.

    Stateless; ``fit`` only validates parameters.
    """

    def __init__(self, target_hz: int = 250, seconds: int = 8):
        self.target_hz = target_hz
        self.seconds = seconds

    def fit(self, X, y=None):
        if self.target_hz <= 0 or self.seconds <= 0:
            raise ValueError("target_hz and seconds must be positive")
        return self

    def transform(self, X):
        return np.stack([preprocess(rec, self.target_hz, self.seconds) for rec in X])

    @staticmethod
    def labels(records) -> np.ndarray:
        return np.array(
            [r.label if r.label is not None else map_label(r.label_text) for r in records]
        )


class MBCRNetClassifier(ClassifierMixin, BaseEstimator):
    """Normal/abnormal ECG classifier.

    ``X`` is ``[n_samples, n_leads, T]``; with ``variant="single"`` either
    one lead is passed or ``lead`` picks it out of the 8 canonical leads.
    ``T`` must equal the profile's time length or be a multiple of it, in
    which case the signal is block-averaged down.

    Parameters
    ----------
    variant : {"T", "L", "F", "single"}
    profile : {"paper", "mini"}
    epochs, batch_size, learning_rate, optimizer, dropout_rate, seed
        Training settings, see :class:`~mbcrnet.train.TrainConfig`.
    unit_order : {"conv-bn-relu", "conv-relu-bn"}
    """

    def __init__(
        self,
        variant: str = "L",
        profile: str = "mini",
        epochs: int = 10,
        batch_size: int = 32,
        learning_rate: float = 1e-3,
        optimizer: str = "adam",
        dropout_rate: float = 0.5,
        seed: int = 0,
        lead: Optional[str] = None,
        unit_order: str = "conv-bn-relu",
    ):
        self.variant = variant
        self.profile = profile
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.dropout_rate = dropout_rate
        self.seed = seed
        self.lead = lead
        self.unit_order = unit_order

    def _spec(self):
        return profile_spec(
            self.profile, self.variant, dropout_rate=self.dropout_rate, unit_order=self.unit_order
        )

    def _inputs(self, X, spec):
        X = check_array(X, allow_nd=True, dtype=np.float64)
        if X.ndim != 3:
            raise ValueError(f"expected X of shape [n_samples, n_leads, T], got {X.shape}")
        if spec.n_leads == 1 and X.shape[1] == len(CANONICAL_LEADS):
            X = X[:, [CANONICAL_LEADS.index(self.lead or "V5")], :]
        if X.shape[1] != spec.n_leads:
            raise ValueError(f"model expects {spec.n_leads} leads, got {X.shape[1]}")
        return fit_length(X, spec.time_len)

    def _config(self) -> TrainConfig:
        return TrainConfig(
            optimizer=self.optimizer, learning_rate=self.learning_rate,
            batch_size=self.batch_size, epochs=self.epochs, dropout_rate=self.dropout_rate,
            seed=self.seed, variant=self.variant, profile=self.profile, lead=self.lead,
        )

    def fit(self, X, y):
        spec = self._spec()
        X = self._inputs(X, spec)
        y = np.asarray(y)
        self.classes_ = unique_labels(y)
        if not set(self.classes_.tolist()) <= {0, 1}:
            raise ValueError("labels must be 0 (normal) or 1 (abnormal)")
        self.classes_ = np.array([0, 1])
        self.model_ = build_model(spec, self.seed)
        self.model_, self.loss_trace_ = train(self.model_, X, y.astype(np.int64), self._config())
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        return predict_proba(self.model_, self._inputs(X, self.model_.spec))

    def predict(self, X):
        return decide(self.predict_proba(X))
