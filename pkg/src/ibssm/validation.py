"""Input validation helpers for the estimator API."""

import numpy as np

from .exceptions import DataError


def as_series_array(X, name="X"):
    """Coerce to a finite (L, M) float64 series array."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise DataError(f"{name} must be a 2-D (length, channels) array, got ndim={X.ndim}")
    if X.shape[0] < 1 or X.shape[1] < 1:
        raise DataError(f"{name} must be non-empty, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise DataError(f"{name} contains non-finite values")
    return X


def as_window_array(X, min_rows, n_channels=None, name="X"):
    """Coerce to a finite (n, rows, M) window array with rows >= min_rows.

    A single 2-D window is promoted to a batch of one.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3:
        raise DataError(f"{name} must be a (n, rows, channels) window array, got ndim={X.ndim}")
    if X.shape[1] < min_rows:
        raise DataError(f"{name} windows have {X.shape[1]} rows, need at least {min_rows}")
    if n_channels is not None and X.shape[2] != n_channels:
        raise DataError(f"{name} has {X.shape[2]} channels, the fitted model expects {n_channels}")
    if not np.all(np.isfinite(X)):
        raise DataError(f"{name} contains non-finite values")
    return X
