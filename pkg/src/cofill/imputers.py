"""Scikit-learn style imputation estimators.

Inputs follow the sklearn orientation: X is (n_timesteps, n_nodes) with NaN
marking missing entries. ``fit`` learns from X's observed values; ``transform``
returns X with gaps filled.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .conditioning import ablation_flags
from .data import Normalizer, SpatioTemporalSeries
from .diffusion import build_schedule, impute, train
from .graph import Graph
from .noise_model import CoFillModel, ModelDims
from .validation import check_adjacency, check_fitted, check_series_matrix


def _to_series(x: np.ndarray, graph: Graph) -> SpatioTemporalSeries:
    values = np.nan_to_num(x.T, nan=0.0)
    mask = (~np.isnan(x.T)).astype(np.float64)
    return SpatioTemporalSeries(values=values, mask=mask, graph=graph)


class MeanImputer(BaseEstimator, TransformerMixin):
    """Fill each node's gaps with its observed mean from the fit data."""

    def fit(self, X, y=None):
        X = check_series_matrix(X)
        self.n_features_in_ = X.shape[1]
        obs = ~np.isnan(X)
        counts = obs.sum(axis=0)
        sums = np.where(obs, X, 0.0).sum(axis=0)
        means = sums / np.maximum(counts, 1)
        fallback = sums.sum() / counts.sum() if counts.sum() else 0.0
        self.statistics_ = np.where(counts > 0, means, fallback)
        return self

    def transform(self, X):
        check_fitted(self, "statistics_")
        X = check_series_matrix(X, self.n_features_in_).copy()
        gaps = np.isnan(X)
        X[gaps] = np.broadcast_to(self.statistics_, X.shape)[gaps]
        return X


class LinearInterpolationImputer(BaseEstimator, TransformerMixin):
    """Per-node linear interpolation in time; boundaries take the nearest
    observed value."""

    def fit(self, X, y=None):
        X = check_series_matrix(X)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_fitted(self, "n_features_in_")
        X = check_series_matrix(X, self.n_features_in_).copy()
        steps = np.arange(X.shape[0])
        global_mean = float(np.nanmean(X)) if not np.isnan(X).all() else 0.0
        for j in range(X.shape[1]):
            obs = ~np.isnan(X[:, j])
            if not obs.any():
                X[:, j] = global_mean
                continue
            X[~obs, j] = np.interp(steps[~obs], steps[obs], X[obs, j])
        return X


class CoFillImputer(BaseEstimator, TransformerMixin):
    """Conditional-diffusion imputer with dual temporal/frequency conditioning.

    ``fit`` trains the noise-prediction network on the observed entries of X
    (internally split into train/validation along time); ``transform`` runs
    reverse diffusion and returns the per-entry median over ``n_samples``
    posterior draws. Pass ``adjacency`` (nodes x nodes) to exploit spatial
    structure; without it nodes are treated as disconnected.
    """

    def __init__(self, channels=32, layers=2, heads=4, virtual_nodes=0,
                 emb_dim=64, tcn_kernel=3, gcn_order=2, dropout=0.1,
                 diffusion_steps=50, beta_min=1e-4, beta_max=0.2,
                 schedule="quadratic", epochs=30, batch_size=16,
                 learning_rate=1e-3, lr_min=1e-5, window_length=24,
                 window_stride=0, masking_strategy="hybrid", n_samples=10,
                 val_samples=4, mean_coef="alpha", ablation="full",
                 adjacency=None, seed=0):
        self.channels = channels
        self.layers = layers
        self.heads = heads
        self.virtual_nodes = virtual_nodes
        self.emb_dim = emb_dim
        self.tcn_kernel = tcn_kernel
        self.gcn_order = gcn_order
        self.dropout = dropout
        self.diffusion_steps = diffusion_steps
        self.beta_min = beta_min
        self.beta_max = beta_max
        self.schedule = schedule
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.lr_min = lr_min
        self.window_length = window_length
        self.window_stride = window_stride
        self.masking_strategy = masking_strategy
        self.n_samples = n_samples
        self.val_samples = val_samples
        self.mean_coef = mean_coef
        self.ablation = ablation
        self.adjacency = adjacency
        self.seed = seed

    def _graph(self, n_nodes: int) -> Graph:
        if self.adjacency is None:
            return Graph(adjacency=np.zeros((n_nodes, n_nodes)))
        return Graph(adjacency=check_adjacency(self.adjacency, n_nodes))

    def fit(self, X, y=None):
        X = check_series_matrix(X)
        self.n_features_in_ = X.shape[1]
        series = _to_series(X, self._graph(X.shape[1]))
        dims = ModelDims(channels=self.channels, layers=self.layers,
                         heads=self.heads, virtual_nodes=self.virtual_nodes,
                         emb_dim=self.emb_dim, tcn_kernel=self.tcn_kernel,
                         gcn_order=self.gcn_order, dropout=self.dropout)
        rng = np.random.default_rng(self.seed)
        model = CoFillModel.init(dims, X.shape[1], self.diffusion_steps, rng,
                                 flags=ablation_flags(self.ablation))
        schedule = build_schedule(self.diffusion_steps, self.beta_min,
                                  self.beta_max, self.schedule)
        window_length = min(self.window_length, series.n_steps)
        result = train(
            series, model, schedule,
            epochs=self.epochs, batch_size=self.batch_size,
            window_length=window_length,
            window_stride=self.window_stride or window_length,
            lr_max=self.learning_rate, lr_min=self.lr_min,
            masking_strategy=self.masking_strategy, seed=self.seed,
            val_samples=self.val_samples, mean_coef=self.mean_coef,
        )
        self.model_ = result.model
        self.normalizer_ = result.normalizer
        self.schedule_ = result.schedule
        self.train_log_ = result.log_rows
        return self

    def sample(self, X, n_samples: int | None = None,
               seed: int | None = None) -> np.ndarray:
        """Posterior draws for X's missing entries; (S, time, nodes)."""
        check_fitted(self, "model_")
        X = check_series_matrix(X, self.n_features_in_)
        series = _to_series(X, self._graph(X.shape[1]))
        rng = np.random.default_rng(self.seed if seed is None else seed)
        result = impute(series, self.model_, self.schedule_, self.normalizer_,
                        n_samples or self.n_samples, rng,
                        window_length=min(self.window_length, series.n_steps),
                        mean_coef=self.mean_coef)
        return result.samples.transpose(0, 2, 1)

    def transform(self, X):
        samples = self.sample(X)
        return np.median(samples, axis=0)
