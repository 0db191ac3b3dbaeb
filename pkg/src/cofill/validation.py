"""Input validation helpers for the estimator API."""
from __future__ import annotations

import numpy as np

from .errors import NotFittedError, ShapeError


def check_series_matrix(x, n_features: int | None = None) -> np.ndarray:
    """Coerce to a 2-D float (time x nodes) array; NaN marks missing."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"expected 2-D (time, nodes) input, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"input needs at least one row and column, got {arr.shape}")
    if np.isinf(arr).any():
        raise ShapeError("input contains infinities; use NaN for missing values")
    if n_features is not None and arr.shape[1] != n_features:
        raise ShapeError(
            f"input has {arr.shape[1]} columns but the estimator was fitted "
            f"with {n_features}"
        )
    return arr


def check_adjacency(a, n_nodes: int) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.shape != (n_nodes, n_nodes):
        raise ShapeError(
            f"adjacency must be ({n_nodes}, {n_nodes}), got {arr.shape}"
        )
    if (arr < 0).any():
        raise ShapeError("adjacency entries must be nonnegative")
    return arr


def check_fitted(estimator, attribute: str) -> None:
    if not hasattr(estimator, attribute):
        raise NotFittedError(
            f"{type(estimator).__name__} must be fitted before use"
        )
