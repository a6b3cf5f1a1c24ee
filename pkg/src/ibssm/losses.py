"""Loss terms: multi-position prediction error, the minimality regularizer
(Gaussian rate term, optionally plus an auxiliary reconstruction decoder), and
the posterior-shift divergence used for the invariance diagnostic.

Each term has a plain-numpy form operating on a ``ForwardTrace`` and a private
``*_graph`` form operating on autodiff Vars for training.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .exceptions import ConfigurationError
from .ssm import ForwardTrace, SsmConfig

VARIANTS = ("rate", "decoder")


@dataclass
class LossBreakdown:
    pred: float
    min: float
    total: float
    lam: float


def _check_variant(variant):
    if variant not in VARIANTS:
        raise ConfigurationError(f"regularizer variant must be one of {VARIANTS}, got {variant!r}")


def scored_positions(config: SsmConfig):
    """0-indexed positions the training loss scores."""
    if config.multi_position_loss:
        return range(config.warmup, config.lookback)
    return range(config.lookback - 1, config.lookback)


def prediction_loss(trace: ForwardTrace, u_window, config: SsmConfig) -> float:
    """Mean squared forecast error over scored positions, horizon steps, and
    scored channels. Position k's targets are window rows k+1 .. k+tau."""
    u_window = np.asarray(u_window, dtype=np.float64)
    positions = list(scored_positions(config))
    if not positions:
        raise ConfigurationError("no scorable position: warmup >= lookback")
    channels = list(config.scored_channels)
    total = 0.0
    count = 0
    for k in positions:
        target = u_window[k + 1 : k + 1 + config.horizon][:, channels]
        pred = trace.predictions[k][:, channels]
        total += float(np.sum((pred - target) ** 2))
        count += target.size
    return total / count


def rate_term(mu, log_sigma) -> float:
    """Mean over steps of KL(N(mu, diag sigma^2) || N(0, I)).

    Deterministic traces (log_sigma None) degenerate to the sigma = 1 form,
    0.5 * mean_k ||mu_k||^2.
    """
    mu = np.asarray(mu, dtype=np.float64)
    if log_sigma is None:
        return float(0.5 * np.mean(np.sum(mu * mu, axis=-1)))
    log_sigma = np.asarray(log_sigma, dtype=np.float64)
    per_step = 0.5 * np.sum(mu * mu + np.exp(2.0 * log_sigma) - 1.0 - 2.0 * log_sigma, axis=-1)
    return float(np.mean(per_step))


def decoder_term(trace: ForwardTrace, u_window, config: SsmConfig) -> float:
    """Mean over steps of the squared reconstruction error ||dec(h_k) - u_k||^2."""
    if trace.recon is None:
        raise ConfigurationError("decoder term requires a trace built with the decoder variant")
    u = np.asarray(u_window, dtype=np.float64)[: config.lookback]
    return float(np.mean(np.sum((trace.recon - u) ** 2, axis=-1)))


def minimality_term(trace: ForwardTrace, u_window, config: SsmConfig, variant, decoder_weight=1.0) -> float:
    _check_variant(variant)
    rate = rate_term(trace.mu, trace.log_sigma)
    if variant == "rate":
        return rate
    return rate + decoder_weight * decoder_term(trace, u_window, config)


def total_loss(trace: ForwardTrace, u_window, config: SsmConfig, lam, variant="rate", decoder_weight=1.0) -> LossBreakdown:
    """pred + lam * minimality, exactly as composed."""
    if lam < 0:
        raise ConfigurationError(f"lambda must be non-negative, got {lam}")
    pred = prediction_loss(trace, u_window, config)
    min_term = minimality_term(trace, u_window, config, variant, decoder_weight)
    return LossBreakdown(pred=pred, min=min_term, total=pred + lam * min_term, lam=lam)


def state_invariance_kl(trace_clean: ForwardTrace, trace_perturbed: ForwardTrace) -> float:
    """Mean over steps of KL(posterior under perturbed input || posterior under
    clean input); deterministic traces fall back to mean ||mu' - mu||^2."""
    mu_c, mu_p = trace_clean.mu, trace_perturbed.mu
    if mu_c.shape != mu_p.shape:
        raise ConfigurationError(f"trace length mismatch: {mu_c.shape} vs {mu_p.shape}")
    if trace_clean.log_sigma is None or trace_perturbed.log_sigma is None:
        return float(np.mean(np.sum((mu_p - mu_c) ** 2, axis=-1)))
    ls_c, ls_p = trace_clean.log_sigma, trace_perturbed.log_sigma
    return float(np.mean(gaussian_kl(mu_p, ls_p, mu_c, ls_c)))


def gaussian_kl(mu0, ls0, mu1, ls1):
    """KL(N(mu0, e^ls0) || N(mu1, e^ls1)) per row, closed form, summed over dims."""
    var_ratio = np.exp(2.0 * (ls0 - ls1))
    gap = (mu1 - mu0) ** 2 * np.exp(-2.0 * ls1)
    return 0.5 * np.sum(var_ratio + gap - 1.0 + 2.0 * (ls1 - ls0), axis=-1)


# -- graph (training) versions -------------------------------------------------


def _target_tensor(windows, config: SsmConfig):
    """(B, S, tau, Mc) targets for scored positions via a sliding view."""
    windows = np.asarray(windows, dtype=np.float64)
    sw = np.lib.stride_tricks.sliding_window_view(windows, config.horizon, axis=1)
    # sw[b, s, m, i] = windows[b, s + i, m]
    positions = list(scored_positions(config))
    start, stop = positions[0] + 1, positions[-1] + 2
    targ = sw[:, start:stop].transpose(0, 1, 3, 2)
    channels = list(config.scored_channels)
    if len(channels) != config.input_channels:
        targ = targ[..., channels]
    return np.ascontiguousarray(targ)


def prediction_loss_graph(pred, windows, config: SsmConfig):
    """pred: Var (B, T, tau, M). Returns scalar Var."""
    positions = list(scored_positions(config))
    if not positions:
        raise ConfigurationError("no scorable position: warmup >= lookback")
    scored = pred[:, positions[0] : positions[-1] + 1]
    channels = list(config.scored_channels)
    if len(channels) != config.input_channels:
        scored = scored[..., channels]
    diff = scored - _target_tensor(windows, config)
    return ad.vmean(diff * diff)


def rate_graph(mu2, ls2):
    """mu2, ls2: Var (N, H); ls2 None degenerates to 0.5 * mean ||mu||^2."""
    if ls2 is None:
        return ad.vmean(ad.vsum(mu2 * mu2, axis=1)) * 0.5
    inner = mu2 * mu2 + ad.exp(ls2 * 2.0) - 1.0 - ls2 * 2.0
    return ad.vmean(ad.vsum(inner, axis=1)) * 0.5


def decoder_graph(recon, windows, config: SsmConfig):
    """recon: Var (B, T, M); compares against the first T window rows."""
    u = np.asarray(windows, dtype=np.float64)[:, : config.lookback, :]
    diff = recon - u
    return ad.vmean(ad.vsum(diff * diff, axis=2))
