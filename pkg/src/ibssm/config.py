"""Experiment configuration: JSON documents with strict validation, flag
overrides, and defaults."""

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .data import NoiseSpec, SyntheticSpec
from .exceptions import ConfigurationError
from .ssm import SsmConfig

DEFAULT_LAMBDA_GRID = (0.0, 0.01, 0.1, 1.0, 2.0, 5.0, 10.0, 100.0, 1000.0, 1e9)


@dataclass
class ExperimentConfig:
    """Everything a run needs; validated before any work starts."""

    dataset: str | None = None  # CSV path; None = synthetic
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    lookback: int = 96
    horizon: int = 96
    embed_dim: int = 16
    state_dim: int = 16
    bottleneck_dim: int = 16
    stochastic: bool = True
    multi_position_loss: bool = True
    warmup: int | None = None
    lambda_grid: tuple = DEFAULT_LAMBDA_GRID
    variant: str = "rate"
    decoder_weight: float = 1.0
    split_ratios: tuple = (0.7, 0.1, 0.2)
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 50
    patience: int = 5
    seeds: tuple = (0, 1, 2)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    horizons: tuple = (24, 48, 96)
    target_channels: tuple | None = None
    stride: int = 1
    out_dir: str = "runs"
    denormalized_metrics: bool = False
    csv_timing: bool = False

    def __post_init__(self):
        if isinstance(self.synthetic, dict):
            self.synthetic = _build_nested(SyntheticSpec, self.synthetic, "synthetic")
        if isinstance(self.noise, dict):
            self.noise = _build_nested(NoiseSpec, self.noise, "noise")
        self.lambda_grid = tuple(float(v) for v in self.lambda_grid)
        if not self.lambda_grid:
            raise ConfigurationError("lambda_grid must be non-empty")
        for lam in self.lambda_grid:
            if lam < 0:
                raise ConfigurationError(f"lambda_grid values must be >= 0, got {lam}")
        self.split_ratios = tuple(float(r) for r in self.split_ratios)
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ConfigurationError("seeds must be non-empty")
        self.horizons = tuple(int(h) for h in self.horizons)
        if self.target_channels is not None:
            self.target_channels = tuple(int(c) for c in self.target_channels)
        if self.variant not in ("rate", "decoder"):
            raise ConfigurationError(f"variant must be rate or decoder, got {self.variant!r}")
        for key in ("lookback", "horizon", "embed_dim", "state_dim", "bottleneck_dim", "batch_size", "max_epochs", "patience", "stride"):
            if int(getattr(self, key)) < 1:
                raise ConfigurationError(f"{key} must be >= 1, got {getattr(self, key)}")
        if self.learning_rate <= 0:
            raise ConfigurationError(f"learning_rate must be > 0, got {self.learning_rate}")
        # constructing the model config validates warmup/dimension interplay
        self.model_config()

    def model_config(self, n_channels=2) -> SsmConfig:
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

    def to_dict(self):
        doc = dataclasses.asdict(self)
        doc["synthetic"] = dataclasses.asdict(self.synthetic)
        doc["noise"] = dataclasses.asdict(self.noise)
        for key, value in list(doc.items()):
            if isinstance(value, tuple):
                doc[key] = list(value)
        for nested in ("synthetic", "noise"):
            for key, value in list(doc[nested].items()):
                if isinstance(value, tuple):
                    doc[nested][key] = list(value)
        return doc


def _build_nested(cls, payload, section):
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = set(payload) - allowed
    if unknown:
        raise ConfigurationError(f"unknown key {sorted(unknown)[0]!r} in {section!r} section")
    converted = dict(payload)
    for key in ("ar_coefficients", "channels"):
        if key in converted and converted[key] is not None:
            converted[key] = tuple(converted[key])
    try:
        return cls(**converted)
    except TypeError as err:
        raise ConfigurationError(f"invalid {section} section: {err}") from None


def parse_config(path=None, overrides=None) -> ExperimentConfig:
    """Load a JSON config file and apply flag overrides on top.

    Unknown keys are rejected by name; an empty or missing file yields all
    defaults.
    """
    payload = {}
    if path is not None:
        text = Path(path).read_text().strip()
        if text:
            try:
                payload = json.loads(text)
            except json.JSONDecodeError as err:
                raise ConfigurationError(f"config file {path} is not valid JSON: {err}") from None
            if not isinstance(payload, dict):
                raise ConfigurationError(f"config file {path} must hold a JSON object")
    if overrides:
        payload = {**payload, **{k: v for k, v in overrides.items() if v is not None}}

    allowed = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(payload) - allowed
    if unknown:
        raise ConfigurationError(f"unknown config key {sorted(unknown)[0]!r}")
    try:
        return ExperimentConfig(**payload)
    except (TypeError, ValueError) as err:
        raise ConfigurationError(f"invalid config: {err}") from None


def write_effective_config(config: ExperimentConfig, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "effective_config.json"
    path.write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    return path
