"""
Tests for dataset generation, splitting and CSV ingestion
"""

import pickle

import numpy as np
import pytest
from scipy.spatial.distance import cdist

import dataset_factory as df
from lab_errors import ContractViolation, CsvParseError


def test_two_moons_noise_free_geometry():
    ds = df.make_two_moons(200, noise=0.0, seed=1)
    upper = ds.features[ds.labels == 0]
    np.testing.assert_allclose(np.hypot(upper[:, 0], upper[:, 1]), 1.0, atol=1e-12)
    assert np.all(upper[:, 1] >= -1e-12)
    assert ds.class_counts() == {0: 100, 1: 100}
    lower = ds.features[ds.labels == 1]
    assert cdist(upper, lower).min() > 0


def test_two_moons_is_deterministic():
    a, b = df.make_two_moons(1900, seed=42), df.make_two_moons(1900, seed=42)
    np.testing.assert_array_equal(a.features, b.features)
    np.testing.assert_array_equal(a.labels, b.labels)
    assert not np.array_equal(a.features, df.make_two_moons(1900, seed=43).features)


def test_two_moons_rejects_tiny_n():
    with pytest.raises(ContractViolation):
        df.make_two_moons(1)


def test_dataset_validation():
    with pytest.raises(ContractViolation):
        df.Dataset(np.ones(3), np.zeros(3))
    with pytest.raises(ContractViolation):
        df.Dataset(np.ones((3, 2)), np.zeros(2))
    with pytest.raises(ContractViolation):
        df.Dataset(np.array([[np.inf, 0.0]]), np.zeros(1))
    with pytest.raises(ContractViolation):
        df.Dataset(np.ones((1, 2)), np.array([-1]))


def test_default_split_is_exhaustive_partition():
    ds = df.make_two_moons(1900, seed=42)
    train, val, test = df.split(ds, (1050, 400, 450), seed=42)
    assert (train.n, val.n, test.n) == (1050, 400, 450)
    rows = np.vstack([train.features, val.features, test.features])
    assert len({tuple(r) for r in rows}) == 1900
    assert {tuple(r) for r in rows} == {tuple(r) for r in ds.features}


def test_split_preserves_balance():
    ds = df.make_two_moons(1900, seed=42)
    for part in df.split(ds, (1050, 400, 450), seed=7):
        for count in part.class_counts().values():
            assert abs(count - part.n / 2) <= 2


def test_split_is_deterministic_per_seed():
    ds = df.make_two_moons(300, seed=0)
    a = df.split(ds, (200, 50, 50), seed=3)
    b = df.split(ds, (200, 50, 50), seed=3)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.features, y.features)


def test_degenerate_split_is_shuffled_full_set():
    ds = df.make_two_moons(100, seed=0)
    train, val, test = df.split(ds, (100, 0, 0), seed=1)
    assert (val.n, test.n) == (0, 0)
    assert sorted(map(tuple, train.features)) == sorted(map(tuple, ds.features))


def test_split_oversubscription():
    with pytest.raises(ContractViolation):
        df.split(df.make_two_moons(100, seed=0), (60, 30, 20))


def test_channel_uniform_levels():
    channel = df.make_channel(4, 10, seed=0)
    np.testing.assert_allclose(channel.levels, [0.125, 0.375, 0.625, 0.875])


def test_channel_single_level_is_fair_coin():
    channel = df.make_channel(1, 10_000, seed=2)
    assert channel.outcomes.mean() == pytest.approx(0.5, abs=3 * 0.5 / np.sqrt(10_000))


def test_channel_empirical_rates_follow_levels():
    channel = df.make_channel(3, 100_000, seed=4)
    np.testing.assert_allclose(channel.empirical_rates(), channel.levels, atol=0.01)


def test_channel_rejects_bad_custom_levels():
    with pytest.raises(ContractViolation):
        df.make_channel(2, 10, spacing=[0.7, 0.3])
    with pytest.raises(ContractViolation):
        df.make_channel(2, 10, spacing=[0.0, 0.5])


def test_regional_noise_flips_only_noisy_regions():
    data = df.make_regional_noise(400, keep_probs=(1.0, 0.5), seed=3)
    assert data.dataset.n == 800
    np.testing.assert_allclose(data.injected_variance, [0.0, 0.25])
    clean = (data.dataset.features[:, 0] > data.centers[data.region_ids, 0]).astype(int)
    agree = data.dataset.labels == clean
    assert agree[data.region_ids == 0].all()
    assert agree[data.region_ids == 1].mean() == pytest.approx(0.5, abs=0.1)


def test_regional_noise_default_has_graded_regions():
    data = df.make_regional_noise(50, seed=0)
    assert data.keep_probs.tolist() == [1.0, 0.9, 0.75, 0.5]
    assert np.unique(data.region_ids).tolist() == [0, 1, 2, 3]
    assert np.all(np.diff(data.injected_variance) > 0)


def test_quadrant_domains_partition_rows():
    ds = df.make_two_moons(400, seed=0)
    domains = df.make_quadrant_domains(ds)
    assert set(domains) <= {"q0", "q1", "q2", "q3"}
    assert sum(d.n for d in domains.values()) == ds.n


CSV_TEXT = "a,b,label\n0.5,1.0,0\n-2,3.5,1\n1e-3,0,1\n"


def test_load_csv_by_index_and_name(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text(CSV_TEXT)
    by_index = df.load_csv(path, -1)
    by_name = df.load_csv(path, "label")
    assert (by_index.n, by_index.d, by_index.num_classes) == (3, 2, 2)
    np.testing.assert_array_equal(by_index.features, by_name.features)
    np.testing.assert_array_equal(by_index.labels, by_name.labels)


def test_load_csv_label_in_first_column(tmp_path):
    path = tmp_path / "first.csv"
    path.write_text("y,x0\n1,0.25\n0,0.75\n")
    ds = df.load_csv(path, 0)
    assert ds.labels.tolist() == [1, 0]
    assert ds.features.tolist() == [[0.25], [0.75]]


def test_load_csv_reports_row_and_column(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b,label\n0.5,1.0,0\nabc,1.0,1\n")
    with pytest.raises(CsvParseError) as info:
        df.load_csv(path)
    assert info.value.row == 2
    assert info.value.column == "a"
    assert "row 2" in str(info.value)


def test_load_csv_rows_count_blank_lines(tmp_path):
    path = tmp_path / "gappy.csv"
    path.write_text("a,b,label\n0.5,1.0,0\n\n\nabc,1.0,1\n")
    with pytest.raises(CsvParseError) as info:
        df.load_csv(path)
    assert info.value.row == 4
    assert "row 4" in str(info.value)


def test_load_csv_rejects_label_gaps(tmp_path):
    path = tmp_path / "gaps.csv"
    path.write_text("a,label\n0.1,0\n0.2,2\n")
    with pytest.raises(ContractViolation):
        df.load_csv(path)


def test_load_csv_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        df.load_csv(tmp_path / "nope.csv")


def test_dump_csv_is_loadable(tmp_path):
    ds = df.make_two_moons(20, seed=5)
    loaded = df.load_csv(df.dump_csv(ds, tmp_path / "moons.csv"))
    np.testing.assert_array_equal(loaded.features, ds.features)
    np.testing.assert_array_equal(loaded.labels, ds.labels)


def test_csv_parse_error_survives_pickling():
    error = pickle.loads(pickle.dumps(CsvParseError("bad cell", 4, "x1")))
    assert (error.row, error.column) == (4, "x1")
    assert str(error) == str(CsvParseError("bad cell", 4, "x1"))
