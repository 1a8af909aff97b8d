import numpy as np
import pytest
from hypothesis import given, strategies as st

from szadapt.errors import ConfigError, ParseError, SizeError
from szadapt.features import band_power, feature_matrix
from szadapt.gbtree import GbtConfig, fit_one_vs_rest, predict_one_vs_rest
from szadapt.signals import (CohortConfig, Recording, generate_subject,
                             generate_synthetic_cohort, read_recording, segment,
                             write_recording)


def small_cfg(**kw):
    base = dict(n_subjects=2, channels=1, duration_s=20.0, blocks_per_subject=2, seed=3)
    base.update(kw)
    return CohortConfig(**base)


def test_ten_second_recording_gives_ten_windows():
    rec = Recording("S", 500, np.zeros((1, 5000)), np.zeros(5000))
    wins = segment(rec, 1.0)
    assert len(wins) == 10
    assert all(w.samples.shape == (1, 500) for w in wins)


def test_all_zero_labels_give_zero_windows():
    rec = Recording("S", 500, np.ones((2, 1500)), np.zeros(1500))
    assert [w.label for w in segment(rec)] == [0, 0, 0]


def test_half_seizure_window_is_labelled_seizure():
    labels = np.r_[np.ones(250), np.zeros(250)]
    rec = Recording("S", 500, np.zeros((1, 500)), labels)
    assert segment(rec)[0].label == 1


def test_window_longer_than_recording():
    rec = Recording("S", 500, np.zeros((1, 100)), np.zeros(100))
    with pytest.raises(SizeError):
        segment(rec)


@given(st.integers(1, 4), st.integers(10, 400), st.integers(2, 60))
def test_segment_preserves_samples(C, T, d):
    rng = np.random.default_rng(T * 7 + d)
    x = rng.standard_normal((C, T))
    if d > T:
        return
    rec = Recording("S", float(d), x, rng.integers(0, 2, T))
    wins = segment(rec, 1.0)
    n = T // d
    joined = np.concatenate([w.samples for w in wins], axis=1)
    assert np.array_equal(joined, x[:, : n * d])


def test_cohort_is_deterministic():
    a = generate_synthetic_cohort(small_cfg(seed=7))
    b = generate_synthetic_cohort(small_cfg(seed=7))
    assert all(x == y for x, y in zip(a, b))


def test_cohort_bytes_are_deterministic(tmp_path):
    for tag in ("a", "b"):
        for rec in generate_synthetic_cohort(small_cfg(seed=7)):
            write_recording(rec, tmp_path / f"{tag}_{rec.subject_id}.csv")
    for sid in ("S01", "S02"):
        assert (tmp_path / f"a_{sid}.csv").read_bytes() == (tmp_path / f"b_{sid}.csv").read_bytes()


def test_cohort_structure():
    cfg = small_cfg(blocks_per_subject=3)
    rec = generate_subject(cfg, 0)
    assert rec.n_samples == int(3 * cfg.duration_s * cfg.sample_rate_hz)
    onsets = np.flatnonzero(np.diff(np.r_[0, rec.labels]) == 1)
    assert len(onsets) == 3


def test_zero_shift_equalises_variances():
    cfg = CohortConfig(n_subjects=2, channels=2, duration_s=30.0, blocks_per_subject=2,
                       shift_strength=0.0, seed=11)
    a, b = generate_synthetic_cohort(cfg)
    for ch in range(2):
        va, vb = a.channels[ch].var(), b.channels[ch].var()
        assert abs(va - vb) / max(va, vb) < 0.05


def test_seizures_raise_high_gamma_power():
    cfg = small_cfg(seizure_gain=4.0, duration_s=60.0)
    rec = generate_subject(cfg, 0)
    wins = segment(rec)
    x = np.stack([w.samples[0] for w in wins])
    y = np.array([w.label for w in wins])
    p = band_power(x, fs=500.0, band=(80.0, 150.0))
    assert p[y == 1].mean() >= 2.0 * p[y == 0].mean()


def test_subject_shift_is_detectable():
    cfg = CohortConfig(n_subjects=4, channels=1, duration_s=30.0, blocks_per_subject=2,
                       shift_strength=1.0, seed=5)
    mats = [feature_matrix(segment(r), r.sample_rate_hz) for r in generate_synthetic_cohort(cfg)]
    rng = np.random.default_rng(0)
    X = np.vstack([m.X for m in mats])
    y = np.concatenate([np.full(len(m), i) for i, m in enumerate(mats)])
    perm = rng.permutation(len(y))
    tr, te = perm[: len(y) // 2], perm[len(y) // 2:]
    classes, models = fit_one_vs_rest(X[tr], y[tr], GbtConfig(n_trees=20))
    acc = np.mean(predict_one_vs_rest(classes, models, X[te]) == y[te])
    assert acc > 1 / 4 + 0.2


@pytest.mark.parametrize("field, value", [("n_subjects", 0), ("channels", 0),
                                          ("duration_s", -1.0), ("seizure_gain", 0.5),
                                          ("blocks_per_subject", 0)])
def test_invalid_config_names_field(field, value):
    with pytest.raises(ConfigError) as info:
        CohortConfig(**{field: value})
    assert info.value.field == field


def test_recording_round_trip(tmp_path):
    rec = generate_subject(small_cfg(channels=2), 1)
    write_recording(rec, tmp_path / "r.csv")
    back = read_recording(tmp_path / "r.csv")
    assert back.subject_id == rec.subject_id
    assert np.max(np.abs(back.channels - rec.channels)) <= 1e-12
    assert np.array_equal(back.labels, rec.labels)


def test_bad_label_line_is_reported(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("subject,S,rate,500,channels,1\n0.5,0\n0.1,2\n")
    with pytest.raises(ParseError, match="line 3"):
        read_recording(p)


def test_zero_rate_header_is_a_config_error(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("subject,S,rate,0,channels,1\n0.5,0\n")
    with pytest.raises(ConfigError):
        read_recording(p)


def test_ragged_row(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("subject,S,rate,500,channels,2\n0.5,0.2,0\n0.1,0\n")
    with pytest.raises(ParseError, match="line 3"):
        read_recording(p)


def test_missing_header(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("0.5,0\n")
    with pytest.raises(ParseError, match="line 1"):
        read_recording(p)
