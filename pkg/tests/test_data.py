import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dperm.data import (
    BUILTIN_DATASETS,
    Dataset,
    SplitSpec,
    builtin_dataset,
    gaussian_blobs,
    load_csv,
    noisy_margin,
    normalize,
    split,
    row_norms,
)


def write_csv(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


class TestLoadCsv:
    def test_label_mapping(self, tmp_path):
        path = write_csv(tmp_path, "a,b,flag\n1,2,yes\n3,4,no\n5,6,yes\n")
        ds = load_csv(path, "flag", "yes")
        assert ds.labels.tolist() == [1.0, -1.0, 1.0]
        assert ds.features.tolist() == [[1, 2], [3, 4], [5, 6]]
        assert ds.feature_names == ("a", "b")

    def test_label_column_by_index(self, tmp_path):
        path = write_csv(tmp_path, "a,flag,b\n1,x,2\n3,y,4\n")
        ds = load_csv(path, 1, "x")
        assert ds.labels.tolist() == [1.0, -1.0]
        assert ds.feature_names == ("a", "b")

    def test_bad_cell_names_row_and_column(self, tmp_path):
        path = write_csv(tmp_path, "a,b,flag\n1,2,yes\n3,oops,no\n")
        with pytest.raises(ValueError, match=r"line 3.*'b'.*'oops'"):
            load_csv(path, "flag", "yes")

    def test_missing_value_rejected(self, tmp_path):
        path = write_csv(tmp_path, "a,b,flag\n1,,yes\n3,4,no\n")
        with pytest.raises(ValueError, match="line 2"):
            load_csv(path, "flag", "yes")

    def test_nan_cell_rejected(self, tmp_path):
        path = write_csv(tmp_path, "a,b,flag\n1,nan,yes\n3,4,no\n")
        with pytest.raises(ValueError, match="non-finite"):
            load_csv(path, "flag", "yes")

    def test_missing_label_column(self, tmp_path):
        path = write_csv(tmp_path, "a,b\n1,2\n3,4\n")
        with pytest.raises(ValueError, match="no column named 'flag'"):
            load_csv(path, "flag", "yes")

    def test_too_few_rows(self, tmp_path):
        path = write_csv(tmp_path, "a,flag\n1,yes\n")
        with pytest.raises(ValueError, match="need at least 2"):
            load_csv(path, "flag", "yes")

    def test_ragged_row(self, tmp_path):
        path = write_csv(tmp_path, "a,b,flag\n1,2,yes\n3,4\n")
        with pytest.raises(ValueError, match="line 3 has 2 cells"):
            load_csv(path, "flag", "yes")

    def test_iris_shape(self):
        ds = builtin_dataset("iris")
        assert (ds.n, ds.dim) == (150, 4)
        # setosa-vs-rest: 50 positive, 100 negative
        assert int((ds.labels == 1.0).sum()) == 50

    def test_breast_cancer_shape(self):
        ds = builtin_dataset("breast_cancer")
        assert (ds.n, ds.dim) == (569, 30)
        assert set(np.unique(ds.labels)) == {-1.0, 1.0}

    def test_unknown_builtin(self):
        with pytest.raises(ValueError, match="unknown builtin"):
            builtin_dataset("mnist")
        assert set(BUILTIN_DATASETS) == {"iris", "breast_cancer"}


class TestDatasetInvariants:
    def test_rejects_bad_labels(self):
        with pytest.raises(ValueError, match=r"\+1 or -1"):
            Dataset(np.eye(2), np.array([1.0, 0.5]))

    def test_rejects_single_row(self):
        with pytest.raises(ValueError, match="at least 2"):
            Dataset(np.ones((1, 2)), np.array([1.0]))

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError, match="non-finite"):
            Dataset(np.array([[1.0, np.inf], [0, 0]]), np.array([1.0, -1.0]))

    def test_arrays_locked(self):
        ds = Dataset(np.eye(2), np.array([1.0, -1.0]))
        with pytest.raises(ValueError):
            ds.features[0, 0] = 5.0


class TestNormalize:
    def test_single_row_scaling(self):
        ds = Dataset(np.array([[3.0, 4.0], [0.0, 0.0]]), np.array([1.0, -1.0]))
        out = normalize(ds)
        np.testing.assert_allclose(out.features[0], [0.6, 0.8], rtol=0, atol=0)

    def test_inside_ball_untouched(self):
        ds = Dataset(np.array([[0.1, 0.2], [0.3, 0.1]]), np.array([1.0, -1.0]))
        assert normalize(ds) is ds

    def test_global_scalar(self):
        ds = Dataset(np.array([[3.0, 4.0], [0.3, 0.4]]), np.array([1.0, -1.0]))
        out = normalize(ds)
        np.testing.assert_allclose(out.features, [[0.6, 0.8], [0.06, 0.08]], rtol=1e-15)

    def test_zero_rows_pass_through(self):
        ds = Dataset(np.array([[0.0, 0.0], [5.0, 0.0]]), np.array([1.0, -1.0]))
        out = normalize(ds)
        assert out.features[0].tolist() == [0.0, 0.0]

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 12), st.integers(1, 6),
           st.floats(0.01, 1e6))
    def test_idempotent_and_in_ball(self, seed, n, dim, magnitude):
        rng = np.random.default_rng(seed)
        ds = Dataset(magnitude * rng.normal(size=(n, dim)),
                     np.where(rng.random(n) < 0.5, 1.0, -1.0))
        once = normalize(ds)
        assert row_norms(once.features).max() <= 1.0
        twice = normalize(once)
        assert twice is once  # bit-exact idempotence

    def test_cosine_similarity_exact(self):
        rng = np.random.default_rng(3)
        X = 5.0 * rng.normal(size=(6, 4))
        ds = Dataset(X, np.where(np.arange(6) % 2 == 0, 1.0, -1.0))
        out = normalize(ds)

        def cosines(M):
            nrm = row_norms(M)
            return (M @ M.T) / np.outer(nrm, nrm)

        np.testing.assert_allclose(cosines(out.features), cosines(X), rtol=1e-12)


class TestSplit:
    def test_sizes_and_determinism(self, tmp_path):
        rng = np.random.default_rng(0)
        ds = Dataset(rng.normal(size=(10, 3)), np.where(np.arange(10) % 2 == 0, 1.0, -1.0))
        spec = SplitSpec(test_fraction=0.2, seed=7)
        train1, test1 = split(ds, spec)
        train2, test2 = split(ds, spec)
        assert (train1.n, test1.n) == (8, 2)
        assert np.array_equal(train1.features, train2.features)
        assert np.array_equal(test1.features, test2.features)

    def test_partition_is_exhaustive(self):
        rng = np.random.default_rng(1)
        ds = Dataset(rng.normal(size=(12, 2)), np.where(np.arange(12) % 2 == 0, 1.0, -1.0))
        train, test = split(ds, SplitSpec(0.25, seed=3))
        merged = np.vstack([train.features, test.features])
        assert merged.shape == ds.features.shape
        # every original row appears exactly once
        orig = sorted(map(tuple, ds.features))
        got = sorted(map(tuple, merged))
        assert orig == got

    def test_tiny_train_errors(self):
        rng = np.random.default_rng(2)
        ds = Dataset(rng.normal(size=(10, 2)), np.where(np.arange(10) % 2 == 0, 1.0, -1.0))
        with pytest.raises(ValueError, match="training rows"):
            split(ds, SplitSpec(0.99, seed=0))

    def test_seeds_give_different_partitions(self):
        rng = np.random.default_rng(4)
        ds = Dataset(rng.normal(size=(10, 2)), np.where(np.arange(10) % 2 == 0, 1.0, -1.0))
        differing = 0
        for seed in range(20):
            _, test_a = split(ds, SplitSpec(0.3, seed=2 * seed))
            _, test_b = split(ds, SplitSpec(0.3, seed=2 * seed + 1))
            if not np.array_equal(test_a.features, test_b.features):
                differing += 1
        assert differing >= 1

    def test_bad_fraction(self):
        with pytest.raises(ValueError):
            SplitSpec(0.0, seed=1)
        with pytest.raises(ValueError):
            SplitSpec(1.0, seed=1)


class TestSynthetic:
    def test_blobs_balanced_and_reproducible(self):
        a = gaussian_blobs(40, 5, seed=9)
        b = gaussian_blobs(40, 5, seed=9)
        assert np.array_equal(a.features, b.features)
        assert int((a.labels == 1.0).sum()) == 20

    def test_blobs_separable_after_normalize(self):
        ds = normalize(gaussian_blobs(200, 8, seed=1))
        # project onto the class-mean difference: classes should separate
        mu_pos = ds.features[ds.labels == 1].mean(axis=0)
        mu_neg = ds.features[ds.labels == -1].mean(axis=0)
        w = mu_pos - mu_neg
        margins = ds.labels * (ds.features @ w)
        assert (margins > 0).mean() > 0.99

    def test_margin_flip_fraction(self):
        ds = noisy_margin(2000, 4, seed=5, flip_fraction=0.1)
        assert ds.n == 2000
        # roughly 10% of labels disagree with a perfect linear fit direction
        assert set(np.unique(ds.labels)) == {-1.0, 1.0}
