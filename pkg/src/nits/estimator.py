"""scikit-learn style front end for the density model.

Mirrors the KernelDensity surface: fit, score_samples, score, sample.
Points outside the learned support bounds score -inf, the honest log
density of a compactly supported model, so the estimator composes with
pipelines without raising on held-out tails.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError
from sklearn.utils import check_array

from . import model as model_mod, sampler, train
from .data import Dataset
from .train import TrainConfig


class NitsDensityEstimator(BaseEstimator):
    """Autoregressive neural density estimator with exact normalization.

    Parameters mirror the model and training knobs; see fit_report_ for
    the per-epoch record after fitting.
    """

    def __init__(self, pnn_hidden=(16, 16), hidden_dim=64, residual_blocks=2,
                 dropout=0.0, masking="autoregressive", learning_rate=1e-3,
                 batch_size=256, max_epochs=100, patience=5, grad_clip=5.0,
                 bounds_margin=0.1, val_fraction=0.1, random_state=0):
        self.pnn_hidden = pnn_hidden
        self.hidden_dim = hidden_dim
        self.residual_blocks = residual_blocks
        self.dropout = dropout
        self.masking = masking
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.grad_clip = grad_clip
        self.bounds_margin = bounds_margin
        self.val_fraction = val_fraction
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        bounds = model_mod.bounds_from_data(X, margin=self.bounds_margin)
        base = model_mod.build_model(
            bounds, pnn_hidden=tuple(self.pnn_hidden),
            hidden_dim=self.hidden_dim, residual_blocks=self.residual_blocks,
            dropout=self.dropout, masking=self.masking, seed=self.random_state)
        ds = Dataset(x=X, bounds=bounds,
                     train_idx=np.arange(X.shape[0]),
                     val_idx=np.array([], dtype=int),
                     test_idx=np.array([], dtype=int),
                     provenance="estimator.fit")
        cfg = TrainConfig(
            batch_size=min(self.batch_size, max(1, X.shape[0])),
            learning_rate=self.learning_rate, patience=self.patience,
            max_epochs=self.max_epochs, grad_clip=self.grad_clip,
            val_fraction=self.val_fraction, seed=self.random_state)
        self.model_, self.fit_report_ = train.fit(base, ds, cfg)
        self.n_features_in_ = X.shape[1]
        return self

    def _require_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError(
                "This NitsDensityEstimator instance is not fitted yet.")

    def score_samples(self, X) -> np.ndarray:
        """Log density per row; -inf outside the learned support."""
        self._require_fitted()
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        out = np.full(X.shape[0], -np.inf)
        mask = model_mod.in_bounds_mask(self.model_, X)
        if np.any(mask):
            out[mask] = model_mod.log_likelihood_batch(self.model_, X[mask])
        return out

    def score(self, X, y=None) -> float:
        """Total log density of X, matching the KernelDensity convention."""
        return float(np.sum(self.score_samples(X)))

    def sample(self, n_samples: int = 1, random_state=None) -> np.ndarray:
        self._require_fitted()
        rng = np.random.default_rng(
            self.random_state if random_state is None else random_state)
        return sampler.sample_ancestral(self.model_, n_samples, rng)
