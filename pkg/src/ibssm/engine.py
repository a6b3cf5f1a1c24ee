"""Training engine: exact reverse-mode gradients of the full objective, Adam,
the epoch loop with early stopping, finite-difference verification, and
checkpoint serialization.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import losses, ssm
from .exceptions import ConfigurationError, NumericOverflowError, TrainingDivergedError
from .ssm import SsmConfig

ADAM_LR = 1e-3
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
BATCH_SIZE = 32
MAX_EPOCHS = 50
PATIENCE = 5


class SsmObjective:
    """Bundles the forecaster's loss pieces behind the engine's interface."""

    def __init__(self, config: SsmConfig, lam: float, variant="rate", decoder_weight=1.0):
        if lam < 0:
            raise ConfigurationError(f"lambda must be non-negative, got {lam}")
        if variant not in losses.VARIANTS:
            raise ConfigurationError(f"unknown regularizer variant {variant!r}")
        self.config = config
        self.lam = lam
        self.variant = variant
        self.decoder_weight = decoder_weight

    def init_params(self, rng):
        return ssm.init_params(self.config, rng)

    def noise(self, rng, n_windows):
        if self.config.stochastic:
            return rng.standard_normal((n_windows, self.config.lookback, self.config.bottleneck_dim))
        return None

    def loss_graph(self, params, windows, noise):
        with_recon = self.variant == "decoder"
        graph = ssm.build_graph(params, windows, noise, self.config, need_pred="all", with_recon=with_recon)
        pred = losses.prediction_loss_graph(graph["pred"], windows, self.config)
        b_n = np.asarray(windows).shape[0]
        n_rows = b_n * self.config.lookback
        mu2 = ad.reshape(graph["mu"], (n_rows, self.config.bottleneck_dim))
        ls2 = graph["log_sigma"]
        if ls2 is not None:
            ls2 = ad.reshape(ls2, (n_rows, self.config.bottleneck_dim))
        min_term = losses.rate_graph(mu2, ls2)
        if with_recon:
            min_term = min_term + losses.decoder_graph(graph["recon"], windows, self.config) * self.decoder_weight
        return pred, min_term

    def predict_last(self, params, windows):
        graph = ssm.build_graph(params, windows, None, self.config, need_pred="last", sample=False)
        return graph["pred"].value

    def posteriors(self, params, windows):
        graph = ssm.build_graph(params, windows, None, self.config, need_pred="none", sample=False)
        ls = graph["log_sigma"]
        return graph["mu"].value, None if ls is None else ls.value


@dataclass
class TrainState:
    params: dict
    m: dict
    v: dict
    step: int = 0
    best_val: float = np.inf
    epochs_since_improvement: int = 0
    seed: int = 0


def new_train_state(params, seed=0) -> TrainState:
    return TrainState(
        params=params,
        m={k: np.zeros_like(v) for k, v in params.items()},
        v={k: np.zeros_like(v) for k, v in params.items()},
        seed=seed,
    )


def adam_step(state: TrainState, grads, lr=ADAM_LR, beta1=ADAM_BETA1, beta2=ADAM_BETA2, eps=ADAM_EPS) -> TrainState:
    """Bias-corrected Adam update applied in place to every array."""
    state.step += 1
    t = state.step
    for key, g in grads.items():
        m = state.m[key] = beta1 * state.m[key] + (1.0 - beta1) * g
        v = state.v[key] = beta2 * state.v[key] + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        state.params[key] = state.params[key] - lr * m_hat / (np.sqrt(v_hat) + eps)
    return state


def loss_and_grads(objective, params, windows, noise):
    """Reverse-mode derivatives of the batch-mean total loss.

    Returns (LossBreakdown, grads dict shaped like params). Parameters unused
    by the active variant receive zero gradients.
    """
    param_vars = {k: ad.Var(v) for k, v in params.items()}
    pred, min_term = objective.loss_graph(param_vars, windows, noise)
    total = pred + min_term * objective.lam
    breakdown = losses.LossBreakdown(
        pred=pred.item(), min=min_term.item(), total=total.item(), lam=objective.lam
    )
    if not np.isfinite(breakdown.total):
        name = "pred" if not np.isfinite(breakdown.pred) else "min"
        raise TrainingDivergedError(f"non-finite loss (first non-finite term: {name})")
    ad.backward(total)
    grads = {}
    for key, var in param_vars.items():
        g = var.grad if var.grad is not None else np.zeros_like(var.value)
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError(f"non-finite gradient (first non-finite array: {key})")
        grads[key] = g
    return breakdown, grads


def loss_value(objective, params, windows, noise) -> losses.LossBreakdown:
    pred, min_term = objective.loss_graph({k: ad.as_var(v) for k, v in params.items()}, windows, noise)
    total = pred.item() + objective.lam * min_term.item()
    return losses.LossBreakdown(pred=pred.item(), min=min_term.item(), total=total, lam=objective.lam)


def gradients(objective, params, windows, rng):
    """Draw fresh bottleneck noise and differentiate the batch loss."""
    windows = np.asarray(windows, dtype=np.float64)
    if windows.shape[0] == 0:
        raise ConfigurationError("gradient batch must be non-empty")
    noise = objective.noise(rng, windows.shape[0])
    return loss_and_grads(objective, params, windows, noise)


def validation_mse(objective, params, windows) -> float:
    """Deterministic last-position forecast MSE on scored channels."""
    cfg = objective.config
    windows = np.asarray(windows, dtype=np.float64)
    preds = objective.predict_last(params, windows)
    targets = windows[:, cfg.lookback :, :]
    channels = list(cfg.scored_channels)
    if len(channels) != cfg.input_channels:
        preds = preds[..., channels]
        targets = targets[..., channels]
    return float(np.mean((preds - targets) ** 2))


def train(
    objective,
    train_windows,
    val_windows,
    seed=0,
    lr=ADAM_LR,
    batch_size=BATCH_SIZE,
    max_epochs=MAX_EPOCHS,
    patience=PATIENCE,
):
    """Mini-batch Adam with early stopping on validation MSE.

    Returns (best parameters, per-epoch history). History rows carry the
    running mean of each loss term plus the epoch's validation MSE.
    """
    train_windows = np.asarray(train_windows, dtype=np.float64)
    val_windows = np.asarray(val_windows, dtype=np.float64)
    if train_windows.shape[0] == 0 or val_windows.shape[0] == 0:
        raise ConfigurationError("train and validation window sets must be non-empty")

    rng = np.random.default_rng(seed)
    params = objective.init_params(rng)
    state = new_train_state(params, seed=seed)
    best_params = {k: v.copy() for k, v in params.items()}
    history = []

    n = train_windows.shape[0]
    for epoch in range(max_epochs):
        order = rng.permutation(n)
        sums = np.zeros(3)
        batches = 0
        for start in range(0, n, batch_size):
            batch = train_windows[order[start : start + batch_size]]
            noise = objective.noise(rng, batch.shape[0])
            try:
                breakdown, grads = loss_and_grads(objective, state.params, batch, noise)
            except (TrainingDivergedError, NumericOverflowError) as err:
                raise TrainingDivergedError(
                    f"{err} at epoch {epoch}, step {state.step}", epoch=epoch, step=state.step
                ) from None
            adam_step(state, grads, lr=lr)
            sums += (breakdown.pred, breakdown.min, breakdown.total)
            batches += 1

        val = validation_mse(objective, state.params, val_windows)
        history.append(
            {
                "epoch": epoch,
                "train_pred": sums[0] / batches,
                "train_min": sums[1] / batches,
                "train_total": sums[2] / batches,
                "val_mse": val,
            }
        )
        if val < state.best_val:
            state.best_val = val
            state.epochs_since_improvement = 0
            best_params = {k: v.copy() for k, v in state.params.items()}
        else:
            state.epochs_since_improvement += 1
            if state.epochs_since_improvement >= patience:
                break
    return best_params, history


def grad_check(objective, params, windows, rng=None, fd_step=1e-5, max_coords=None):
    """Max relative error of analytic gradients against central differences.

    Noise is frozen across all evaluations. When max_coords is given and the
    model has more coordinates, a seeded subsample is checked instead.
    """
    windows = np.asarray(windows, dtype=np.float64)
    noise_rng = rng if rng is not None else np.random.default_rng(0)
    noise = objective.noise(noise_rng, windows.shape[0])

    _, grads = loss_and_grads(objective, params, windows, noise)

    coords = [(key, i) for key in sorted(params) for i in range(params[key].size)]
    if max_coords is not None and len(coords) > max_coords:
        picker = np.random.default_rng(12345)
        idx = picker.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in idx]

    work = {k: v.copy() for k, v in params.items()}
    worst = 0.0
    for key, i in coords:
        flat = work[key].reshape(-1)
        orig = flat[i]
        flat[i] = orig + fd_step
        up = loss_value(objective, work, windows, noise).total
        flat[i] = orig - fd_step
        down = loss_value(objective, work, windows, noise).total
        flat[i] = orig
        numeric = (up - down) / (2.0 * fd_step)
        analytic = grads[key].reshape(-1)[i]
        err = abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))
        worst = max(worst, err)
    return worst


# -- checkpoints -----------------------------------------------------------------


def save_checkpoint(path, params, meta=None):
    """Self-describing JSON document: metadata plus every named array with its
    shape. Decimal float serialization round-trips bit-exactly."""
    doc = {
        "format": "ibssm-checkpoint",
        "version": 1,
        "meta": meta or {},
        "params": {
            key: {"shape": list(value.shape), "data": np.asarray(value, dtype=np.float64).reshape(-1).tolist()}
            for key, value in params.items()
        },
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_checkpoint(path):
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "ibssm-checkpoint":
        raise ConfigurationError(f"{path} is not a checkpoint file")
    params = {
        key: np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
        for key, entry in doc["params"].items()
    }
    return params, doc.get("meta", {})
