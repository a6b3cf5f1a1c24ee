"""Dataset ingestion, chronological splitting, train-statistics normalization,
sliding windows, synthetic signal+distractor generation, and test-time impulse
noise injection.
"""

import csv
from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .exceptions import ConfigurationError, DataError

STD_FLOOR = 1e-8

_TIMESTAMP_FORMATS = (
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%d %H:%M",
    "%Y-%m-%d",
    "%Y/%m/%d %H:%M:%S",
    "%Y/%m/%d %H:%M",
    "%Y/%m/%d",
)


@dataclass
class SeriesFrame:
    """A timestamped multivariate series. `norm_stats` is set by `normalize`
    and always comes from the training range only."""

    name: str
    timestamps: list
    values: np.ndarray  # (L, M)
    channel_names: list
    norm_stats: dict | None = None

    @property
    def length(self):
        return self.values.shape[0]

    @property
    def n_channels(self):
        return self.values.shape[1]


def _parse_timestamp(text, row):
    for fmt in _TIMESTAMP_FORMATS:
        try:
            return datetime.strptime(text, fmt)
        except ValueError:
            continue
    raise DataError(f"unparseable timestamp {text!r} at row {row}")


def load_csv(path) -> SeriesFrame:
    """Read a CSV whose first column is a timestamp and remaining columns are
    numeric channels. Missing values are rejected (all offending rows listed),
    as are non-monotone timestamps."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if len(header) < 2:
            raise DataError(f"{path}: need a timestamp column plus at least one channel")
        channel_names = header[1:]
        timestamps, rows = [], []
        missing_rows = []
        for i, row in enumerate(reader):
            if len(row) != len(header):
                raise DataError(f"{path}: row {i} has {len(row)} cells, expected {len(header)}")
            if any(cell.strip() == "" for cell in row):
                missing_rows.append(i)
                continue
            timestamps.append(row[0])
            parsed = []
            for j, cell in enumerate(row[1:], start=1):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"{path}: unparseable numeric {cell!r} at row {i}, column {header[j]!r}"
                    ) from None
            rows.append(parsed)
    if missing_rows:
        raise DataError(f"{path}: missing values at rows {missing_rows}")

    parsed_ts = [_parse_timestamp(t, i) for i, t in enumerate(timestamps)]
    for i in range(1, len(parsed_ts)):
        if parsed_ts[i] <= parsed_ts[i - 1]:
            raise DataError(
                f"{path}: timestamps not strictly increasing at row {i} ({timestamps[i]!r})"
            )
    values = np.array(rows, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        bad = sorted(set(np.argwhere(~np.isfinite(values))[:, 0].tolist()))
        raise DataError(f"{path}: non-finite values at rows {bad}")
    return SeriesFrame(name=path.stem, timestamps=timestamps, values=values, channel_names=channel_names)


def export_csv(frame: SeriesFrame, path):
    """Write a frame back out in the load_csv layout."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date"] + list(frame.channel_names))
        for ts, row in zip(frame.timestamps, frame.values):
            writer.writerow([ts] + [repr(float(v)) for v in row])


def split(frame: SeriesFrame, ratios=(0.7, 0.1, 0.2), min_rows=0):
    """Contiguous chronological (train, val, test) index ranges."""
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigurationError(f"split ratios must sum to 1, got {ratios}")
    if any(r < 0 for r in ratios):
        raise ConfigurationError(f"split ratios must be non-negative, got {ratios}")
    length = frame.length
    a = int(np.floor(ratios[0] * length))
    b = int(np.floor((ratios[0] + ratios[1]) * length))
    ranges = {"train": (0, a), "val": (a, b), "test": (b, length)}
    for name, (lo, hi) in ranges.items():
        if hi - lo < min_rows:
            raise DataError(
                f"{name} split has {hi - lo} rows, needs at least {min_rows}"
            )
    return ranges["train"], ranges["val"], ranges["test"]


def normalize(frame: SeriesFrame, train_range) -> SeriesFrame:
    """Per-channel z-score with population statistics of the train range only."""
    lo, hi = train_range
    if hi <= lo:
        raise DataError("normalization requires a non-empty train range")
    train = frame.values[lo:hi]
    mean = train.mean(axis=0)
    std = train.std(axis=0) + STD_FLOOR
    values = (frame.values - mean) / std
    return SeriesFrame(
        name=frame.name,
        timestamps=list(frame.timestamps),
        values=values,
        channel_names=list(frame.channel_names),
        norm_stats={"mean": mean, "std": std},
    )


def denormalize(values, norm_stats):
    return values * norm_stats["std"] + norm_stats["mean"]


def windows(values, rng_bounds, lookback, horizon, stride=1):
    """Sliding (lookback + horizon) windows inside [start, stop).

    Returns an (n, lookback + horizon, M) array; n = span - lookback - horizon + 1
    at stride 1. Windows never cross the range boundary.
    """
    start, stop = rng_bounds
    values = np.asarray(values, dtype=np.float64)
    span = stop - start
    size = lookback + horizon
    if span < size:
        raise DataError(f"range of {span} rows cannot hold a {size}-row window")
    if stride < 1:
        raise ConfigurationError(f"stride must be >= 1, got {stride}")
    starts = range(start, stop - size + 1, stride)
    return np.stack([values[s : s + size] for s in starts])


# -- synthetic processes ------------------------------------------------------------


@dataclass
class SyntheticSpec:
    """AR(2) signal plus an independently generated distractor channel.

    distractor_std is the stationary standard deviation of the distractor
    process; the ar1 kind uses a fixed coefficient `distractor_phi`.
    """

    length: int = 4000
    ar_coefficients: tuple = (1.5, -0.75)
    innovation_std: float = 0.1
    distractor_kind: str = "iid-gaussian"
    distractor_std: float = 0.5
    distractor_phi: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.length < 3:
            raise ConfigurationError("synthetic length must be >= 3")
        if self.distractor_kind not in ("iid-gaussian", "ar1"):
            raise ConfigurationError(
                f"distractor kind must be iid-gaussian or ar1, got {self.distractor_kind!r}"
            )
        if self.distractor_std < 0 or self.innovation_std <= 0:
            raise ConfigurationError("innovation std must be > 0 and distractor std >= 0")
        self.ar_coefficients = tuple(float(c) for c in self.ar_coefficients)
        moduli = ar2_root_moduli(*self.ar_coefficients)
        if np.any(moduli >= 1.0):
            raise ConfigurationError(
                f"AR(2) coefficients {self.ar_coefficients} are unstable: root moduli {moduli}"
            )


def ar2_root_moduli(phi1, phi2):
    """Moduli of the characteristic roots of x_k = phi1 x_{k-1} + phi2 x_{k-2}."""
    roots = np.roots([1.0, -phi1, -phi2])
    return np.abs(roots)


def gen_synthetic(spec: SyntheticSpec) -> SeriesFrame:
    """Channels [signal, distractor]; the distractor stream is generated from
    a generator stream disjoint from the signal's, so it is non-causal for the
    signal's future by construction."""
    phi1, phi2 = spec.ar_coefficients
    sig_seq, dis_seq = np.random.SeedSequence(spec.seed).spawn(2)
    sig_rng = np.random.default_rng(sig_seq)
    dis_rng = np.random.default_rng(dis_seq)

    burn = 500
    n = spec.length + burn
    eps = sig_rng.normal(0.0, spec.innovation_std, size=n)
    signal = np.zeros(n)
    for k in range(2, n):
        signal[k] = phi1 * signal[k - 1] + phi2 * signal[k - 2] + eps[k]
    signal = signal[burn:]

    if spec.distractor_std == 0.0:
        distractor = np.zeros(spec.length)
    elif spec.distractor_kind == "iid-gaussian":
        distractor = dis_rng.normal(0.0, spec.distractor_std, size=spec.length)
    else:
        phi = spec.distractor_phi
        if not -1.0 < phi < 1.0:
            raise ConfigurationError(f"ar1 distractor coefficient must lie in (-1, 1), got {phi}")
        innov = spec.distractor_std * np.sqrt(1.0 - phi * phi)
        shocks = dis_rng.normal(0.0, innov, size=spec.length + burn)
        series = np.zeros(spec.length + burn)
        for k in range(1, series.size):
            series[k] = phi * series[k - 1] + shocks[k]
        distractor = series[burn:]

    start = datetime(2000, 1, 1)
    timestamps = [(start + timedelta(hours=k)).strftime("%Y-%m-%d %H:%M:%S") for k in range(spec.length)]
    values = np.column_stack([signal, distractor])
    return SeriesFrame(
        name="synthetic", timestamps=timestamps, values=values,
        channel_names=["signal", "distractor"],
    )


# -- impulse noise --------------------------------------------------------------------


@dataclass
class NoiseSpec:
    """Sparse additive spikes: each (input step, channel) cell is hit with
    probability p; a hit adds sign * magnitude * channel sigma."""

    probability: float = 0.05
    magnitude: float = 3.0
    channels: tuple | None = None  # None = all channels
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ConfigurationError(f"noise probability must lie in [0, 1], got {self.probability}")
        if self.magnitude < 0.0:
            raise ConfigurationError(f"noise magnitude must be >= 0, got {self.magnitude}")
        if self.channels is not None:
            self.channels = tuple(int(c) for c in self.channels)


def inject_impulse_noise(windows_arr, spec: NoiseSpec, lookback, channel_sigma):
    """Perturb the model-input rows (first `lookback`) of each window.

    channel_sigma: per-channel train-split standard deviations. Returns
    (perturbed windows, boolean hit mask); forecast targets are never touched.
    """
    windows_arr = np.asarray(windows_arr, dtype=np.float64)
    n, size, m = windows_arr.shape
    if lookback > size:
        raise ConfigurationError(f"lookback {lookback} exceeds window size {size}")
    channel_sigma = np.asarray(channel_sigma, dtype=np.float64)
    if channel_sigma.shape != (m,):
        raise ConfigurationError(f"channel_sigma must have shape ({m},), got {channel_sigma.shape}")

    rng = np.random.default_rng(spec.seed)
    hits = rng.random(size=(n, lookback, m)) < spec.probability
    signs = rng.integers(0, 2, size=(n, lookback, m)) * 2 - 1
    if spec.channels is not None:
        bad = [c for c in spec.channels if not 0 <= c < m]
        if bad:
            raise ConfigurationError(f"noise channels {bad} outside [0, {m})")
        keep = np.zeros(m, dtype=bool)
        keep[list(spec.channels)] = True
        hits = hits & keep

    mask = np.zeros((n, size, m), dtype=bool)
    mask[:, :lookback, :] = hits
    perturbed = windows_arr.copy()
    perturbed[:, :lookback, :] += hits * signs * spec.magnitude * channel_sigma
    return perturbed, mask
