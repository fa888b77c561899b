import numpy as np
import pytest

from srnnkit.data import (
    Component,
    DataError,
    Dataset,
    MixtureSpec,
    SplitSpec,
    gen_mixture,
    load_csv,
    load_truth,
    save_csv,
    split,
    standardize,
)


def write(tmp_path, text, name="data.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


class TestLoadCsv:
    def test_first_appearance_label_mapping(self, tmp_path):
        p = write(tmp_path, "x,y,label\n1,2,cat\n3,4,dog\n5,6,cat\n")
        ds = load_csv(p, label_column="label")
        assert ds.n == 3 and ds.class_count == 2
        assert ds.labels.tolist() == [0, 1, 0]
        assert ds.label_names == ("cat", "dog")

    def test_non_numeric_cell_names_row_and_column(self, tmp_path):
        p = write(tmp_path, "x,y,label\n1,2,a\n3,abc,b\n")
        with pytest.raises(DataError, match="line 3") as exc:
            load_csv(p, label_column="label")
        assert "y" in str(exc.value)

    def test_single_class_rejected(self, tmp_path):
        p = write(tmp_path, "x,label\n1,a\n2,a\n")
        with pytest.raises(DataError, match="fewer than 2 classes"):
            load_csv(p, label_column="label")

    def test_label_column_by_index_without_header(self, tmp_path):
        p = write(tmp_path, "1,2,0\n3,4,1\n", name="raw.csv")
        ds = load_csv(p, label_column=2, has_header=False)
        assert ds.labels.tolist() == [0, 1]
        assert ds.features.tolist() == [[1.0, 2.0], [3.0, 4.0]]

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="cannot read"):
            load_csv(tmp_path / "nope.csv", label_column=0)

    def test_roundtrip_with_truth_sidecar(self, tmp_path):
        spec = MixtureSpec(components=(
            Component(mean=(0.0, 1.0), std=0.5, count=8, label=0),
            Component(mean=(4.0, -1.0), std=0.5, count=5, label=1),
        ), seed=3)
        ds = gen_mixture(spec)
        save_csv(ds, tmp_path / "d.csv", truth_path=tmp_path / "t.csv")
        back = load_csv(tmp_path / "d.csv", label_column="label")
        truth = load_truth(tmp_path / "t.csv")
        assert np.array_equal(back.features, ds.features)
        assert np.array_equal(back.labels, ds.labels)
        assert np.array_equal(truth.cluster_id, ds.truth.cluster_id)


class TestDatasetInvariants:
    def test_rejects_non_finite(self):
        with pytest.raises(DataError, match="non-finite"):
            Dataset(features=np.array([[1.0], [np.nan]]), labels=np.array([0, 1]), class_count=2)

    def test_rejects_out_of_range_labels(self):
        with pytest.raises(DataError):
            Dataset(features=np.zeros((2, 1)), labels=np.array([0, 2]), class_count=2)

    def test_immutable_arrays(self):
        ds = Dataset(features=np.zeros((2, 1)), labels=np.array([0, 1]), class_count=2)
        with pytest.raises(ValueError):
            ds.features[0, 0] = 5.0


class TestSplit:
    def test_exact_largest_remainder_sizes(self):
        ds = Dataset(features=np.random.default_rng(0).normal(size=(100, 2)),
                     labels=np.tile([0, 1], 50), class_count=2)
        tr, va, te = split(ds, SplitSpec(0.8, 0.08, 0.12, seed=5))
        assert (tr.n, va.n, te.n) == (80, 8, 12)

    def test_deterministic_and_partition(self):
        rng = np.random.default_rng(1)
        ds = Dataset(features=rng.normal(size=(53, 3)), labels=rng.integers(0, 3, 53),
                     class_count=3)
        spec = SplitSpec(0.6, 0.2, 0.2, seed=42)
        a = split(ds, spec)
        b = split(ds, spec)
        for x, y in zip(a, b):
            assert np.array_equal(x.features, y.features)
        # the three parts are disjoint and cover the dataset
        key = lambda part: {tuple(row) for row in part.features}
        union = key(a[0]) | key(a[1]) | key(a[2])
        assert len(union) == 53
        assert sum(p.n for p in a) == 53

    def test_empty_part_rejected(self):
        ds = Dataset(features=np.zeros((5, 1)), labels=np.array([0, 1, 0, 1, 0]), class_count=2)
        with pytest.raises(DataError, match="empty part"):
            split(ds, SplitSpec(0.9, 0.05, 0.05, seed=0))

    def test_bijection_over_seeds(self):
        rng = np.random.default_rng(2)
        ds = Dataset(features=np.arange(40, dtype=float).reshape(40, 1),
                     labels=rng.integers(0, 2, 40), class_count=2)
        for seed in range(10):
            parts = split(ds, SplitSpec(0.5, 0.25, 0.25, seed=seed))
            values = np.sort(np.concatenate([p.features[:, 0] for p in parts]))
            assert np.array_equal(values, np.arange(40, dtype=float))


class TestStandardize:
    def test_column_moments(self):
        ds = Dataset(features=np.array([[1.0], [2.0], [3.0]]), labels=np.array([0, 1, 0]),
                     class_count=2)
        scaler, out = standardize(ds)
        assert scaler.mean[0] == pytest.approx(2.0)
        assert abs(out.features[:, 0].mean()) < 1e-9
        assert abs(out.features[:, 0].std() - 1.0) < 1e-9

    def test_constant_column_centered_not_scaled(self):
        ds = Dataset(features=np.array([[5.0, 1.0], [5.0, 2.0], [5.0, 3.0]]),
                     labels=np.array([0, 1, 0]), class_count=2)
        _, out = standardize(ds)
        assert np.allclose(out.features[:, 0], 0.0)

    def test_scaler_applies_to_held_out_point(self):
        rng = np.random.default_rng(3)
        ds = Dataset(features=rng.normal(2.0, 3.0, size=(50, 4)),
                     labels=rng.integers(0, 2, 50), class_count=2)
        scaler, _ = standardize(ds)
        x = rng.normal(size=4)
        assert np.allclose(scaler.transform_features(x), (x - scaler.mean) / scaler.scale)

    def test_idempotent_on_standardized_data(self):
        rng = np.random.default_rng(4)
        ds = Dataset(features=rng.normal(5.0, 2.0, size=(64, 3)),
                     labels=rng.integers(0, 2, 64), class_count=2)
        _, once = standardize(ds)
        _, twice = standardize(once)
        assert np.max(np.abs(twice.features - once.features)) < 1e-9


class TestGenMixture:
    def test_counts_and_truth(self):
        spec = MixtureSpec(components=(
            Component(mean=(0.0,), std=1.0, count=100, label=0),
            Component(mean=(9.0,), std=1.0, count=20, label=1),
        ), seed=0)
        ds = gen_mixture(spec)
        assert ds.n == 120
        assert int(np.sum(ds.truth.cluster_id == 1)) == 20

    def test_labels_follow_components(self):
        spec = MixtureSpec(components=(
            Component(mean=(0.0, 0.0), std=0.1, count=30, label=1),
            Component(mean=(5.0, 5.0), std=0.1, count=30, label=0),
        ), seed=2)
        ds = gen_mixture(spec)
        for ci, comp in enumerate(spec.components):
            assert np.all(ds.labels[ds.truth.cluster_id == ci] == comp.label)

    def test_tiny_std_concentrates_on_mean(self):
        spec = MixtureSpec(components=(
            Component(mean=(1.0, -2.0), std=1e-6, count=200, label=0),
            Component(mean=(5.0, 5.0), std=1e-6, count=10, label=1),
        ), seed=7)
        ds = gen_mixture(spec)
        first = ds.features[ds.truth.cluster_id == 0]
        dist = np.sqrt(np.sum((first - np.array([1.0, -2.0])) ** 2, axis=1))
        assert np.max(dist) < 1e-4

    def test_bit_identical_given_seed(self):
        spec = MixtureSpec(components=(
            Component(mean=(0.0,), std=1.0, count=50, label=0),
            Component(mean=(3.0,), std=1.0, count=50, label=1),
        ), seed=11)
        a, b = gen_mixture(spec), gen_mixture(spec)
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.labels, b.labels)

    def test_spec_validation(self):
        with pytest.raises(DataError):
            MixtureSpec(components=(Component(mean=(0.0,), std=0.0, count=5, label=0),), seed=0)
        with pytest.raises(DataError, match="contiguous"):
            MixtureSpec(components=(
                Component(mean=(0.0,), std=1.0, count=5, label=0),
                Component(mean=(1.0,), std=1.0, count=5, label=2),
            ), seed=0)

    def test_json_roundtrip(self):
        spec = MixtureSpec(components=(
            Component(mean=(0.5, 1.5), std=0.7, count=12, label=0),
            Component(mean=(4.0, 4.0), std=0.2, count=4, label=1),
        ), seed=9)
        assert MixtureSpec.from_json(spec.to_json()) == spec
