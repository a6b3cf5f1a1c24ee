"""Linear forecasting baseline with an optional bottleneck hook.

At lam = 0 the model is a plain affine map from the flattened lookback to the
flattened forecast. At lam > 0 the lookback is routed through a stochastic
bottleneck head whose rate term joins the objective, exercising the same
minimality regularizer on a non-recurrent model.
"""

import numpy as np

from . import autodiff as ad
from . import losses
from .exceptions import ConfigurationError
from .ssm import LOG_SIGMA_MAX, LOG_SIGMA_MIN, SsmConfig


def init_linear_params(config: SsmConfig, rng: np.random.Generator, with_hook: bool):
    t_len, m, tau, h = config.lookback, config.input_channels, config.horizon, config.bottleneck_dim
    flat_in, flat_out = t_len * m, tau * m

    def u(fan_in, *shape):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    if not with_hook:
        return {"lin_W": u(flat_in, flat_out, flat_in), "lin_b": np.zeros(flat_out)}
    return {
        "lmu_W": u(flat_in, h, flat_in),
        "lmu_b": np.zeros(h),
        "lsig_W": u(flat_in, h, flat_in),
        "lsig_b": np.zeros(h),
        "ly_W": u(h, flat_out, h),
        "ly_b": np.zeros(flat_out),
    }


class LinearObjective:
    """Training objective for the baseline; duck-types the engine interface."""

    def __init__(self, config: SsmConfig, lam: float, variant="rate", decoder_weight=1.0):
        if lam < 0:
            raise ConfigurationError(f"lambda must be non-negative, got {lam}")
        self.config = config
        self.lam = lam
        self.with_hook = lam > 0

    def init_params(self, rng):
        return init_linear_params(self.config, rng, self.with_hook)

    def noise(self, rng, n_windows):
        if self.with_hook and self.config.stochastic:
            return rng.standard_normal((n_windows, self.config.bottleneck_dim))
        return None

    def _flat_input(self, windows):
        windows = np.asarray(windows, dtype=np.float64)
        b_n = windows.shape[0]
        return windows[:, : self.config.lookback, :].reshape(b_n, -1)

    def loss_graph(self, params, windows, noise):
        cfg = self.config
        windows = np.asarray(windows, dtype=np.float64)
        b_n = windows.shape[0]
        p = {k: ad.as_var(v) for k, v in params.items()}
        flat = ad.Var(self._flat_input(windows))

        min_term = ad.Var(0.0)
        if self.with_hook:
            mu = ad.matmul(flat, ad.transpose(p["lmu_W"])) + p["lmu_b"]
            if cfg.stochastic:
                ls = ad.clip(
                    ad.matmul(flat, ad.transpose(p["lsig_W"])) + p["lsig_b"],
                    LOG_SIGMA_MIN, LOG_SIGMA_MAX,
                )
                h = mu + ad.exp(ls) * noise
            else:
                ls = None
                h = mu
            pred2 = ad.matmul(h, ad.transpose(p["ly_W"])) + p["ly_b"]
            min_term = losses.rate_graph(mu, ls)
        else:
            pred2 = ad.matmul(flat, ad.transpose(p["lin_W"])) + p["lin_b"]

        pred3 = ad.reshape(pred2, (b_n, cfg.horizon, cfg.input_channels))
        channels = list(cfg.scored_channels)
        targets = windows[:, cfg.lookback :, :]
        if len(channels) != cfg.input_channels:
            pred3 = pred3[..., channels]
            targets = targets[..., channels]
        diff = pred3 - targets
        return ad.vmean(diff * diff), min_term

    def predict_last(self, params, windows):
        """Deterministic forecasts, (B, tau, M)."""
        cfg = self.config
        flat = self._flat_input(windows)
        if self.with_hook:
            mu = flat @ params["lmu_W"].T + params["lmu_b"]
            pred2 = mu @ params["ly_W"].T + params["ly_b"]
        else:
            pred2 = flat @ params["lin_W"].T + params["lin_b"]
        return pred2.reshape(flat.shape[0], cfg.horizon, cfg.input_channels)

    def posteriors(self, params, windows):
        """Bottleneck statistics as (B, 1, H) arrays, or None without the hook."""
        if not self.with_hook:
            return None
        flat = self._flat_input(windows)
        mu = flat @ params["lmu_W"].T + params["lmu_b"]
        if not self.config.stochastic:
            return mu[:, None, :], None
        ls = np.clip(flat @ params["lsig_W"].T + params["lsig_b"], LOG_SIGMA_MIN, LOG_SIGMA_MAX)
        return mu[:, None, :], ls[:, None, :]
