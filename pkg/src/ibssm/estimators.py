"""Scikit-learn style estimators.

``SsmForecaster`` is the selective state-space model with the minimality
regularizer; ``LinearForecaster`` is the flattened-lookback linear baseline
with the same regularizer attached through a bottleneck hook when lam > 0;
``PersistenceForecaster`` repeats the last observation.

All three follow the fit/predict/get_params protocol. ``fit`` accepts either a
(length, channels) series, from which stride-1 windows are built, or a
prebuilt (n, lookback + horizon, channels) window array.
"""

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import NotFittedError

from . import data, engine
from .exceptions import DataError
from .linear import LinearObjective
from .ssm import SsmConfig
from .validation import as_series_array, as_window_array


class _WindowForecaster(BaseEstimator, RegressorMixin):
    """Shared fit/predict plumbing; subclasses provide the objective."""

    def _make_objective(self, n_channels):
        raise NotImplementedError

    def _config(self, n_channels):
        return SsmConfig(
            input_channels=n_channels,
            lookback=self.lookback,
            horizon=self.horizon,
            embed_dim=self.embed_dim,
            state_dim=self.state_dim,
            bottleneck_dim=self.bottleneck_dim,
            stochastic=self.stochastic,
            multi_position_loss=self.multi_position_loss,
            warmup=self.warmup,
            target_channels=self.target_channels,
        )

    def _windows_from(self, X, name):
        X = np.asarray(X, dtype=np.float64)
        size = self.lookback + self.horizon
        if X.ndim <= 2:
            series = as_series_array(X, name)
            if series.shape[0] < size:
                raise DataError(f"{name} series of length {series.shape[0]} cannot hold a {size}-row window")
            return data.windows(series, (0, series.shape[0]), self.lookback, self.horizon)
        return as_window_array(X, size, name=name)

    def fit(self, X, y=None, X_val=None):
        """Train with mini-batch Adam and early stopping on validation MSE.

        Without X_val the last 10% of the training windows (chronological) are
        held out for early stopping.
        """
        train_w = self._windows_from(X, "X")
        if X_val is not None:
            val_w = self._windows_from(X_val, "X_val")
        else:
            cut = max(1, int(round(train_w.shape[0] * 0.9)))
            if cut == train_w.shape[0]:
                cut = train_w.shape[0] - 1
            if cut < 1:
                raise DataError("need at least two windows to hold out a validation set")
            train_w, val_w = train_w[:cut], train_w[cut:]

        self.n_features_in_ = train_w.shape[2]
        self.config_ = self._config(self.n_features_in_)
        self.objective_ = self._make_objective(self.n_features_in_)
        self.params_, self.history_ = engine.train(
            self.objective_,
            train_w,
            val_w,
            seed=self.seed,
            lr=self.learning_rate,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            patience=self.patience,
        )
        self.best_val_mse_ = min(h["val_mse"] for h in self.history_)
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted yet; call fit first")

    def predict(self, X):
        """Deterministic forecasts from the last lookback position.

        X: (n, rows, M) or a single (rows, M) window with rows >= lookback;
        only the first lookback rows are read. Returns (n, horizon, M), or
        (horizon, M) for a single window.
        """
        self._check_fitted()
        single = np.asarray(X).ndim == 2
        X = as_window_array(X, self.lookback, self.n_features_in_)
        size = self.lookback + self.horizon
        if X.shape[1] < size:
            pad = np.zeros((X.shape[0], size - X.shape[1], X.shape[2]))
            X = np.concatenate([X, pad], axis=1)
        preds = self.objective_.predict_last(self.params_, X)
        return preds[0] if single else preds

    def score(self, X, y=None):
        """Negative last-position MSE on scored channels (higher is better).

        X must be (n, lookback + horizon, M) windows; targets are the trailing
        horizon rows unless y of shape (n, horizon, M) is given.
        """
        self._check_fitted()
        X = as_window_array(X, self.lookback + self.horizon, self.n_features_in_)
        targets = X[:, self.lookback :, :] if y is None else np.asarray(y, dtype=np.float64)
        preds = self.predict(X)
        channels = list(self.config_.scored_channels)
        return -float(np.mean((preds[..., channels] - targets[..., channels]) ** 2))

    def posterior_stats(self, X):
        """Bottleneck posterior (mu, log_sigma) for diagnostic use; log_sigma
        is None for deterministic models."""
        self._check_fitted()
        X = as_window_array(X, self.lookback, self.n_features_in_)
        size = self.lookback + self.horizon
        if X.shape[1] < size:
            pad = np.zeros((X.shape[0], size - X.shape[1], X.shape[2]))
            X = np.concatenate([X, pad], axis=1)
        return self.objective_.posteriors(self.params_, X)


class SsmForecaster(_WindowForecaster):
    """Selective SSM forecaster trained with pred + lam * minimality loss."""

    def __init__(
        self,
        lookback=96,
        horizon=96,
        embed_dim=16,
        state_dim=16,
        bottleneck_dim=16,
        lam=0.0,
        variant="rate",
        decoder_weight=1.0,
        stochastic=True,
        multi_position_loss=True,
        warmup=None,
        target_channels=None,
        learning_rate=engine.ADAM_LR,
        batch_size=engine.BATCH_SIZE,
        max_epochs=engine.MAX_EPOCHS,
        patience=engine.PATIENCE,
        seed=0,
    ):
        self.lookback = lookback
        self.horizon = horizon
        self.embed_dim = embed_dim
        self.state_dim = state_dim
        self.bottleneck_dim = bottleneck_dim
        self.lam = lam
        self.variant = variant
        self.decoder_weight = decoder_weight
        self.stochastic = stochastic
        self.multi_position_loss = multi_position_loss
        self.warmup = warmup
        self.target_channels = target_channels
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.seed = seed

    def _make_objective(self, n_channels):
        return engine.SsmObjective(
            self._config(n_channels), lam=self.lam, variant=self.variant,
            decoder_weight=self.decoder_weight,
        )


class LinearForecaster(_WindowForecaster):
    """Affine map from the flattened lookback to the forecast; lam > 0 routes
    the lookback through a stochastic bottleneck and adds its rate term."""

    def __init__(
        self,
        lookback=96,
        horizon=96,
        bottleneck_dim=16,
        lam=0.0,
        stochastic=True,
        target_channels=None,
        learning_rate=engine.ADAM_LR,
        batch_size=engine.BATCH_SIZE,
        max_epochs=engine.MAX_EPOCHS,
        patience=engine.PATIENCE,
        seed=0,
    ):
        self.lookback = lookback
        self.horizon = horizon
        self.bottleneck_dim = bottleneck_dim
        self.lam = lam
        self.stochastic = stochastic
        self.target_channels = target_channels
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.seed = seed

    # fixed internals the shared config still needs
    embed_dim = 1
    state_dim = 1
    multi_position_loss = True
    warmup = None

    def _make_objective(self, n_channels):
        return LinearObjective(self._config(n_channels), lam=self.lam)


class PersistenceForecaster(BaseEstimator, RegressorMixin):
    """Forecasts every horizon step as the last observed value per channel."""

    def __init__(self, lookback=96, horizon=96):
        self.lookback = lookback
        self.horizon = horizon

    def fit(self, X=None, y=None):
        self.fitted_ = True
        return self

    def predict(self, X):
        single = np.asarray(X).ndim == 2
        X = as_window_array(X, self.lookback)
        last = X[:, self.lookback - 1, :]
        preds = np.repeat(last[:, None, :], self.horizon, axis=1)
        return preds[0] if single else preds
