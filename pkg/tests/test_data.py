"""Data layer tests: CSV ingestion, chronological splits, normalization,
windowing, synthetic generation, and impulse noise."""

import numpy as np
import pytest

from ibssm import data
from ibssm.data import NoiseSpec, SeriesFrame, SyntheticSpec
from ibssm.exceptions import ConfigurationError, DataError


def write_csv(path, text):
    path.write_text(text)
    return path


# -- load_csv -----------------------------------------------------------------


def test_load_small_well_formed_file(tmp_path):
    p = write_csv(
        tmp_path / "tiny.csv",
        "date,a,b\n2020-01-01 00:00:00,1.0,2.0\n2020-01-01 01:00:00,3.0,4.0\n2020-01-01 02:00:00,5.0,6.0\n",
    )
    frame = data.load_csv(p)
    assert frame.length == 3 and frame.n_channels == 2
    assert frame.channel_names == ["a", "b"]
    assert np.array_equal(frame.values, [[1, 2], [3, 4], [5, 6]])


def test_load_rejects_decreasing_timestamps(tmp_path):
    p = write_csv(
        tmp_path / "bad.csv",
        "date,a\n2020-01-02,1.0\n2020-01-01,2.0\n",
    )
    with pytest.raises(DataError, match="strictly increasing"):
        data.load_csv(p)


def test_load_ett_layout_header(tmp_path):
    # public ETT hourly layout: timestamp plus seven channels ending in OT
    header = "date,HUFL,HULL,MUFL,MULL,LUFL,LULL,OT"
    rows = "\n".join(
        f"2016-07-01 {hh:02d}:00:00," + ",".join(str(float(hh + j)) for j in range(7))
        for hh in range(4)
    )
    frame = data.load_csv(write_csv(tmp_path / "ETTh1.csv", header + "\n" + rows + "\n"))
    assert frame.n_channels == 7
    assert frame.channel_names[-1] == "OT"


def test_load_rejects_missing_values_listing_rows(tmp_path):
    p = write_csv(
        tmp_path / "gaps.csv",
        "date,a\n2020-01-01,1.0\n2020-01-02,\n2020-01-03,3.0\n2020-01-04,\n",
    )
    with pytest.raises(DataError, match=r"rows \[1, 3\]"):
        data.load_csv(p)


def test_load_rejects_unparseable_numeric_with_location(tmp_path):
    p = write_csv(tmp_path / "junk.csv", "date,a,b\n2020-01-01,1.0,oops\n")
    with pytest.raises(DataError, match="row 0, column 'b'"):
        data.load_csv(p)


def test_export_round_trip(tmp_path):
    spec = SyntheticSpec(length=50, seed=3)
    frame = data.gen_synthetic(spec)
    path = tmp_path / "synth.csv"
    data.export_csv(frame, path)
    back = data.load_csv(path)
    assert back.n_channels == 2
    assert np.array_equal(back.values, frame.values)


# -- split ----------------------------------------------------------------------


def frame_of(values):
    values = np.asarray(values, dtype=np.float64)
    ts = [f"2020-01-{1 + i // 24:02d} {i % 24:02d}:00:00" for i in range(len(values))]
    return SeriesFrame("t", ts, values, [f"c{j}" for j in range(values.shape[1])])


def test_split_arithmetic():
    frame = frame_of(np.zeros((100, 1)))
    train, val, test = data.split(frame)
    assert train == (0, 70) and val == (70, 80) and test == (80, 100)


def test_split_rejects_bad_ratios():
    frame = frame_of(np.zeros((100, 1)))
    with pytest.raises(ConfigurationError):
        data.split(frame, ratios=(0.5, 0.2, 0.2))


def test_split_names_violated_range():
    frame = frame_of(np.zeros((30, 1)))
    with pytest.raises(DataError, match="val split"):
        data.split(frame, min_rows=6)


def test_windows_never_straddle_split_edges():
    values = np.arange(100.0).reshape(-1, 1)
    frame = frame_of(values)
    _, val, _ = data.split(frame)
    w = data.windows(frame.values, val, lookback=4, horizon=2)
    assert w.min() >= 70.0 and w.max() < 80.0


# -- normalize ---------------------------------------------------------------------


def test_normalize_hand_computed_zscore():
    frame = frame_of(np.array([[1.0], [2.0], [3.0]]))
    normed = data.normalize(frame, (0, 3))
    std = np.sqrt(2.0 / 3.0)  # population std of the full train split
    assert abs(normed.norm_stats["mean"][0] - 2.0) < 1e-12
    assert abs(normed.norm_stats["std"][0] - std) < 1e-7
    assert np.allclose(normed.values[:, 0], [-1.224744871, 0.0, 1.224744871], atol=1e-6)


def test_normalize_constant_channel_yields_zeros():
    frame = frame_of(np.full((10, 2), 5.0))
    normed = data.normalize(frame, (0, 7))
    assert np.array_equal(normed.values, np.zeros((10, 2)))


def test_denormalize_round_trip():
    rng = np.random.default_rng(0)
    frame = frame_of(rng.normal(2.0, 3.0, size=(50, 3)))
    normed = data.normalize(frame, (0, 35))
    back = data.denormalize(normed.values, normed.norm_stats)
    assert np.max(np.abs(back - frame.values)) < 1e-10


def test_normalize_reads_train_range_only():
    rng = np.random.default_rng(1)
    values = rng.normal(size=(50, 2))
    tampered = values.copy()
    tampered[35:] += 100.0  # val/test regions must not affect the stats
    s1 = data.normalize(frame_of(values), (0, 35)).norm_stats
    s2 = data.normalize(frame_of(tampered), (0, 35)).norm_stats
    assert np.array_equal(s1["mean"], s2["mean"])
    assert np.array_equal(s1["std"], s2["std"])


# -- windows -----------------------------------------------------------------------


def test_window_count_and_shape():
    values = np.arange(20.0).reshape(10, 2)
    w = data.windows(values, (0, 10), lookback=4, horizon=2)
    assert w.shape == (5, 6, 2)


def test_single_window_at_full_stride():
    values = np.arange(10.0).reshape(10, 1)
    w = data.windows(values, (0, 10), lookback=4, horizon=2, stride=10)
    assert w.shape[0] == 1


def test_window_first_rows_reconstruct_range():
    values = np.arange(30.0).reshape(15, 2)
    w = data.windows(values, (3, 13), lookback=4, horizon=2)
    firsts = w[:, 0, :]
    assert np.array_equal(firsts, values[3 : 13 - 6 + 1])
    rebuilt = np.vstack([firsts, w[-1, 1:, :]])
    assert np.array_equal(rebuilt, values[3:13])


def test_windows_reject_short_range():
    with pytest.raises(DataError):
        data.windows(np.zeros((10, 1)), (0, 5), lookback=4, horizon=2)


# -- synthetic ----------------------------------------------------------------------


def test_ar2_default_coefficients_accepted():
    moduli = data.ar2_root_moduli(1.5, -0.75)
    assert np.allclose(moduli, np.sqrt(0.75))
    frame = data.gen_synthetic(SyntheticSpec(length=100, seed=0))
    assert frame.values.shape == (100, 2)
    assert frame.channel_names == ["signal", "distractor"]


def test_unstable_coefficients_rejected():
    with pytest.raises(ConfigurationError, match="unstable"):
        data.gen_synthetic(SyntheticSpec(length=100, ar_coefficients=(1.5, 0.5)))


def test_zero_distractor_std_gives_zero_channel():
    frame = data.gen_synthetic(SyntheticSpec(length=100, distractor_std=0.0, seed=1))
    assert np.array_equal(frame.values[:, 1], np.zeros(100))


def test_distractor_independent_of_signal_futures():
    spec = SyntheticSpec(length=10_000, distractor_std=0.6, distractor_kind="ar1", seed=7)
    frame = data.gen_synthetic(spec)
    signal, distractor = frame.values[:, 0], frame.values[:, 1]
    for lead in (1, 2, 5):
        r = np.corrcoef(distractor[:-lead], signal[lead:])[0, 1]
        assert abs(r) < 0.05


def test_signal_stream_disjoint_from_distractor_stream():
    a = data.gen_synthetic(SyntheticSpec(length=200, seed=5, distractor_kind="iid-gaussian"))
    b = data.gen_synthetic(SyntheticSpec(length=200, seed=5, distractor_kind="ar1", distractor_std=2.0))
    assert np.array_equal(a.values[:, 0], b.values[:, 0])
    assert not np.array_equal(a.values[:, 1], b.values[:, 1])


def test_ar1_distractor_matches_requested_std():
    spec = SyntheticSpec(length=50_000, distractor_kind="ar1", distractor_std=0.8, seed=2)
    frame = data.gen_synthetic(spec)
    assert abs(frame.values[:, 1].std() - 0.8) < 0.05


# -- impulse noise -----------------------------------------------------------------


def test_zero_probability_is_identity():
    rng = np.random.default_rng(2)
    w = rng.normal(size=(6, 10, 2))
    noisy, mask = data.inject_impulse_noise(w, NoiseSpec(probability=0.0, seed=1), 8, np.ones(2))
    assert np.array_equal(noisy, w)
    assert not mask.any()


def test_full_probability_matches_seeded_reference():
    rng = np.random.default_rng(3)
    w = rng.normal(size=(4, 10, 2))
    sigma = np.array([1.5, 0.5])
    spec = NoiseSpec(probability=1.0, magnitude=3.0, seed=42)
    noisy, mask = data.inject_impulse_noise(w, spec, 8, sigma)

    # seeded reference generator reproducing the draw recipe
    ref = np.random.default_rng(42)
    hits = ref.random(size=(4, 8, 2)) < 1.0
    signs = ref.integers(0, 2, size=(4, 8, 2)) * 2 - 1
    expected = w.copy()
    expected[:, :8, :] += hits * signs * 3.0 * sigma
    assert np.array_equal(noisy, expected)
    assert mask[:, :8, :].all() and not mask[:, 8:, :].any()
    deltas = np.abs(noisy[:, :8, :] - w[:, :8, :])
    assert np.allclose(deltas, 3.0 * sigma)


def test_targets_never_perturbed():
    rng = np.random.default_rng(4)
    w = rng.normal(size=(5, 12, 3))
    noisy, _ = data.inject_impulse_noise(w, NoiseSpec(probability=0.5, seed=0), 9, np.ones(3))
    assert np.array_equal(noisy[:, 9:, :], w[:, 9:, :])


def test_noise_idempotent_given_spec():
    rng = np.random.default_rng(5)
    w = rng.normal(size=(5, 10, 2))
    spec = NoiseSpec(probability=0.3, seed=11)
    n1, m1 = data.inject_impulse_noise(w, spec, 8, np.ones(2))
    n2, m2 = data.inject_impulse_noise(w, spec, 8, np.ones(2))
    assert np.array_equal(n1, n2) and np.array_equal(m1, m2)


def test_noise_channel_mask():
    rng = np.random.default_rng(6)
    w = rng.normal(size=(5, 10, 3))
    spec = NoiseSpec(probability=1.0, channels=(1,), seed=0)
    noisy, mask = data.inject_impulse_noise(w, spec, 8, np.ones(3))
    assert np.array_equal(noisy[:, :, [0, 2]], w[:, :, [0, 2]])
    assert mask[:, :8, 1].all()


def test_invalid_probability_rejected():
    with pytest.raises(ConfigurationError):
        NoiseSpec(probability=1.5)
    with pytest.raises(ConfigurationError):
        NoiseSpec(magnitude=-1.0)
