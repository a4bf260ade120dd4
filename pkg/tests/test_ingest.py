import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dfdx.ingest import (AlignmentError, FeatureTable, FrequencyTrace, OrderingError, ParseError,
                         SchemaError, SyntheticConfig, format_utc, parse_utc, read_feature_csv,
                         read_frequency_csv, read_synthetic_config, synthesize_dataset,
                         write_feature_csv, write_frequency_csv, write_synthetic_config)

T0 = "2016-12-01T00:00:00Z"


def _write(path, text):
    path.write_text(text)
    return path


def test_utc_round_trip():
    assert format_utc(parse_utc(T0)) == T0
    assert parse_utc("2016-12-01T01:00:00+00:00") - parse_utc(T0) == 3600


def test_read_three_rows(tmp_path):
    p = _write(tmp_path / "f.csv", "timestamp_utc,frequency_hz\n"
               "2016-12-01T00:00:00Z,50.0\n2016-12-01T00:00:01Z,50.0\n2016-12-01T00:00:02Z,50.0\n")
    tr = read_frequency_csv(p)
    assert len(tr) == 3
    assert np.all(tr.values == 50.0)
    assert tr.start_time == parse_utc(T0)


def test_gap_becomes_nan(tmp_path):
    p = _write(tmp_path / "f.csv", "timestamp_utc,frequency_hz\n"
               "2016-12-01T00:00:00Z,50.0\n2016-12-01T00:00:02Z,50.01\n")
    tr = read_frequency_csv(p)
    assert len(tr) == 3
    assert np.isnan(tr.values[1]) and tr.values[2] == 50.01


def test_frequency_round_trip(tmp_path, rng):
    vals = 50 + rng.normal(scale=0.02, size=100)
    vals[17] = np.nan
    tr = FrequencyTrace(parse_utc(T0), vals)
    write_frequency_csv(tmp_path / "f.csv", tr)
    back = read_frequency_csv(tmp_path / "f.csv")
    assert back.start_time == tr.start_time
    np.testing.assert_array_equal(back.values, tr.values)


def test_malformed_row_reports_line(tmp_path):
    p = _write(tmp_path / "f.csv", "timestamp_utc,frequency_hz\n"
               "2016-12-01T00:00:00Z,50.0\n2016-12-01T00:00:01Z,abc\n")
    with pytest.raises(ParseError) as err:
        read_frequency_csv(p)
    assert err.value.line == 3


def test_non_monotonic_timestamps(tmp_path):
    p = _write(tmp_path / "f.csv", "timestamp_utc,frequency_hz\n"
               "2016-12-01T00:00:01Z,50.0\n2016-12-01T00:00:00Z,50.0\n")
    with pytest.raises(OrderingError):
        read_frequency_csv(p)


def test_trace_invariants():
    with pytest.raises(ValueError):
        FrequencyTrace(0, [50.0])
    with pytest.raises(ValueError):
        FrequencyTrace(0, [50.0, 50.0], sample_period=0)
    tr = FrequencyTrace(0, [50.0, 50.0])
    with pytest.raises(ValueError):
        tr.values[0] = 1.0


def test_feature_two_rows(tmp_path):
    p = _write(tmp_path / "x.csv", "hour_utc,load,solar\n"
               "2016-12-01T00:00:00Z,1,2\n2016-12-01T01:00:00Z,3,4\n")
    t = read_feature_csv(p)
    assert t.feature_names == ["load", "solar"]
    assert len(t) == 2 and t.row_mask.all()


def test_feature_empty_cell_masks_row(tmp_path):
    p = _write(tmp_path / "x.csv", "hour_utc,load,solar\n"
               "2016-12-01T00:00:00Z,1,\n2016-12-01T01:00:00Z,3,4\n")
    t = read_feature_csv(p)
    assert len(t) == 2
    assert list(t.row_mask) == [False, True]


def test_feature_duplicate_column(tmp_path):
    p = _write(tmp_path / "x.csv", "hour_utc,load,load\n2016-12-01T00:00:00Z,1,2\n")
    with pytest.raises(SchemaError):
        read_feature_csv(p)


def test_feature_not_hour_aligned(tmp_path):
    p = _write(tmp_path / "x.csv", "hour_utc,load\n2016-12-01T00:30:00Z,1\n")
    with pytest.raises(AlignmentError):
        read_feature_csv(p)


def test_feature_round_trip(tmp_path, rng):
    hours = parse_utc(T0) + 3600 * np.arange(24)
    load = rng.normal(size=24) * 1e4
    solar = rng.random(24)
    solar[5] = np.nan
    t = FeatureTable(hours, {"load": load, "solar": solar})
    write_feature_csv(tmp_path / "x.csv", t)
    back = read_feature_csv(tmp_path / "x.csv")
    np.testing.assert_array_equal(back.hour_timestamps, t.hour_timestamps)
    np.testing.assert_array_equal(back.row_mask, t.row_mask)
    for name in t.feature_names:
        np.testing.assert_array_equal(back.columns[name], t.columns[name])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.booleans(), min_size=1, max_size=48))
def test_mask_partition(holes):
    n = len(holes)
    col = np.where(holes, np.nan, 1.0)
    t = FeatureTable(3600 * np.arange(n), {"a": col, "b": np.zeros(n)})
    assert int(t.row_mask.sum()) + int((~t.row_mask).sum()) == n
    assert list(~t.row_mask) == holes


def test_synthetic_flat_profiles_give_zero_truth():
    cfg = SyntheticConfig(n_days=2, load_profile=(3e5,) * 24, solar_profile=(0.0,) * 24,
                          load_day_std=0.1, solar_min_scale=0.0)
    _, table, truth = synthesize_dataset(cfg)
    assert len(truth) == 48 and len(table) == 48
    assert np.all(truth.rocof == 0.0)


def test_synthetic_determinism():
    cfg = SyntheticConfig(n_days=2, noise_std=0.002, load_day_std=0.05, hourly_jitter_mw=500.0,
                          rng_seed=7)
    a = synthesize_dataset(cfg)
    b = synthesize_dataset(cfg)
    np.testing.assert_array_equal(a[0].values, b[0].values)
    for name in a[1].feature_names:
        np.testing.assert_array_equal(a[1].columns[name], b[1].columns[name])
    np.testing.assert_array_equal(a[2].rocof, b[2].rocof)
    c = synthesize_dataset(SyntheticConfig(n_days=2, noise_std=0.002, rng_seed=8))
    assert not np.array_equal(a[0].values, c[0].values)


def test_synthetic_single_step_slope():
    load = (0.0,) * 6 + (1000.0,) * 18
    cfg = SyntheticConfig(n_days=1, imbalance_gain=0.002, load_profile=load,
                          solar_profile=(0.0,) * 24)
    trace, table, truth = synthesize_dataset(cfg)
    assert truth.rocof[6] == pytest.approx(2.0, abs=1e-12)
    assert truth.rocof[0] == pytest.approx(-2.0, abs=1e-12)  # the day wraps back down
    assert np.all(truth.rocof[[1, 2, 3, 4, 5, 7, 12, 23]] == 0.0)
    # the ramp is read off the frequency itself
    k = trace.index_of(int(table.hour_timestamps[6]))
    np.testing.assert_allclose(np.diff(trace.values[k:k + 300]) * 1e3, 2.0, atol=1e-9)


def test_synthetic_table_shape():
    cfg = SyntheticConfig(n_days=3)
    trace, table, truth = synthesize_dataset(cfg)
    assert len(table) == 72
    assert trace.start_time == table.hour_timestamps[0] - 3600
    assert set(table.feature_names) >= {"load_ramp", "solar_ramp", "hour", "weekday", "month"}
    np.testing.assert_array_equal(table.columns["hour"], np.tile(np.arange(24), 3))


def test_synthetic_config_round_trip(tmp_path):
    cfg = SyntheticConfig(n_days=4, noise_std=0.002, hour_offsets={22: -1.0, 4: 0.25},
                          rocof_bias=-0.3, solar_min_scale=0.2)
    write_synthetic_config(tmp_path / "c.cfg", cfg)
    assert read_synthetic_config(tmp_path / "c.cfg") == cfg


def test_synthetic_config_validation(tmp_path):
    with pytest.raises(ValueError):
        SyntheticConfig(n_days=0)
    with pytest.raises(ValueError):
        SyntheticConfig(noise_std=-1.0)
    p = _write(tmp_path / "c.cfg", "n_days=2\nbogus=1\n")
    with pytest.raises(ParseError):
        read_synthetic_config(p)
