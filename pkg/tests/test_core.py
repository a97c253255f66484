import csv

import numpy as np
import pytest

from rerand.core import (
    Allocation,
    CovariateMatrix,
    Outcome,
    RngStream,
    group_means,
    half_split_matrix,
    make_allocation,
    read_covariate_csv,
    sate_estimator,
    sigma_factor,
    standardize,
    write_allocation_csv,
)


def _plain_matrix(col):
    col = np.asarray(col, dtype=float).reshape(-1, 1)
    return CovariateMatrix(
        values=col,
        n=col.shape[0],
        d=1,
        standardized=False,
        column_means=np.zeros(1),
        column_sds=np.ones(1),
    )


class TestStandardize:
    def test_simple_column(self):
        x = standardize(np.array([[1.0], [2.0], [3.0], [4.0]]))
        col = x.values[:, 0]
        assert abs(col.mean()) < 1e-10
        assert abs(col.var(ddof=1) - 1.0) < 1e-8
        expected = np.array([-1.5, -0.5, 0.5, 1.5])
        np.testing.assert_allclose(col / col[3], expected / expected[3], rtol=1e-12)
        np.testing.assert_allclose(x.column_means, [2.5])

    def test_idempotent(self):
        rng = np.random.default_rng(0)
        x = standardize(rng.standard_normal((30, 4)))
        again = standardize(x.values)
        np.testing.assert_allclose(again.values, x.values, atol=1e-12)

    def test_constant_column(self):
        x = standardize(np.array([[5.0, 1.0], [5.0, 2.0], [5.0, 3.0]]))
        assert x.constant_columns[0]
        assert not x.constant_columns[1]
        np.testing.assert_array_equal(x.values[:, 0], 0.0)

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            standardize(np.empty((0, 3)))
        with pytest.raises(ValueError):
            standardize(np.array([[1.0, np.nan], [2.0, 3.0]]))
        with pytest.raises(ValueError):
            standardize(np.array([[1.0, 2.0]]))  # single row

    def test_shape_metadata(self):
        x = standardize(np.arange(12.0).reshape(4, 3))
        assert (x.n, x.d) == (4, 3)
        assert x.standardized


class TestGroupMeans:
    def test_hand_example(self):
        x = _plain_matrix([-1.3416, -0.4472, 0.4472, 1.3416])
        w = make_allocation([1, 1, 0, 0])
        gm = group_means(x, w)
        assert gm.diff[0] == pytest.approx(-1.7888, abs=1e-4)
        np.testing.assert_allclose(gm.diff, gm.treat_mean - gm.control_mean)

    def test_antisymmetry(self):
        rng = np.random.default_rng(1)
        x = standardize(rng.standard_normal((20, 3)))
        for _ in range(25):
            w = make_allocation(rng.permutation([1] * 10 + [0] * 10))
            d1 = group_means(x, w).diff
            d2 = group_means(x, w.complement()).diff
            np.testing.assert_allclose(d1 + d2, 0.0, atol=1e-12)

    def test_zero_column(self):
        x = _plain_matrix([0.0, 0.0, 0.0, 0.0])
        w = make_allocation([1, 0, 1, 0])
        assert group_means(x, w).diff[0] == 0.0

    def test_matches_matrix_form_at_equal_split(self):
        rng = np.random.default_rng(2)
        x = standardize(rng.standard_normal((16, 4)))
        w = make_allocation(rng.permutation([1] * 8 + [0] * 8))
        direct = group_means(x, w).diff
        matrix_form = (4.0 / 16) * x.values.T @ np.asarray(w.assignment, float)
        np.testing.assert_allclose(direct, matrix_form, atol=1e-12)

    def test_errors(self):
        x = _plain_matrix([1.0, 2.0, 3.0, 4.0])
        with pytest.raises(ValueError):
            group_means(x, make_allocation([1, 1, 1, 1]))
        with pytest.raises(ValueError):
            group_means(x, make_allocation([1, 0, 1]))


class TestSateEstimator:
    def test_examples(self):
        w = make_allocation([1, 0, 1, 0])
        assert sate_estimator(Outcome(np.array([1.0, 2.0, 3.0, 4.0])), w) == -1.0
        assert sate_estimator(Outcome(np.full(4, 3.7)), w) == 0.0
        w2 = make_allocation([1, 1, 0, 0])
        assert sate_estimator(Outcome(np.array([1.0, 1.0, 0.0, 0.0])), w2) == 1.0

    def test_shift_invariance(self):
        rng = np.random.default_rng(3)
        y = rng.standard_normal(10)
        w = make_allocation(rng.permutation([1] * 5 + [0] * 5))
        a = sate_estimator(Outcome(y), w)
        b = sate_estimator(Outcome(y + 11.5), w)
        assert a == pytest.approx(b, abs=1e-12)

    def test_empty_group(self):
        with pytest.raises(ValueError):
            sate_estimator(Outcome(np.ones(4)), make_allocation([0, 0, 0, 0]))


class TestAllocation:
    def test_invariants(self):
        w = make_allocation([1, 0, 1, 0, 1])
        assert (w.n_treated, w.n_control, w.n) == (3, 2, 5)
        assert not w.equal_split
        with pytest.raises(ValueError):
            Allocation(np.array([1, 2, 0]), 2, 1)
        with pytest.raises(ValueError):
            Allocation(np.array([1, 1, 0]), 1, 2)

    def test_outcome_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            Outcome(np.array([1.0, np.inf]))


class TestRngStream:
    def test_reproducible(self):
        a = RngStream(123, 4).generator().standard_normal(8)
        b = RngStream(123, 4).generator().standard_normal(8)
        np.testing.assert_array_equal(a, b)

    def test_streams_differ(self):
        a = RngStream(123, 0).generator().standard_normal(8)
        b = RngStream(123, 1).generator().standard_normal(8)
        assert not np.allclose(a, b)

    def test_children_deterministic_and_distinct(self):
        root = RngStream(55)
        c1 = root.child(7)
        c2 = root.child(7)
        assert c1 == c2
        assert root.child(1) != root.child(2)
        x = c1.generator().standard_normal(1000)
        y = root.child(8).generator().standard_normal(1000)
        assert abs(np.corrcoef(x, y)[0, 1]) < 0.12

    def test_half_split_matrix_row_sums(self):
        gen = RngStream(9).generator()
        m = half_split_matrix(10, 50, gen)
        np.testing.assert_array_equal(m.sum(axis=1), 5)
        m_odd = half_split_matrix(7, 50, gen)
        np.testing.assert_array_equal(m_odd.sum(axis=1), 4)


class TestSigmaFactor:
    def test_equal_split_matches_cn(self):
        n = 100
        assert sigma_factor(50, 50) == pytest.approx(4.0 / (n * n - n), rel=1e-14)

    def test_near_equal(self):
        assert sigma_factor(3, 2) == pytest.approx((1 / 3 + 1 / 2) / 4, rel=1e-14)


class TestCsv:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "cov.csv"
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["a", "b"])
            out.writerows([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        names, values = read_covariate_csv(path)
        assert names == ["a", "b"]
        np.testing.assert_allclose(values, [[1, 2], [3, 4], [5, 6]])

    def test_malformed(self, tmp_path):
        ragged = tmp_path / "ragged.csv"
        ragged.write_text("a,b\n1,2\n3\n")
        with pytest.raises(ValueError):
            read_covariate_csv(ragged)
        nonnum = tmp_path / "nonnum.csv"
        nonnum.write_text("a\nok\n")
        with pytest.raises(ValueError):
            read_covariate_csv(nonnum)
        empty = tmp_path / "empty.csv"
        empty.write_text("a\n")
        with pytest.raises(ValueError):
            read_covariate_csv(empty)

    def test_allocation_output(self, tmp_path):
        path = tmp_path / "alloc.csv"
        write_allocation_csv(path, make_allocation([1, 0, 0, 1]))
        rows = list(csv.reader(open(path)))
        assert rows[0] == ["unit_index", "assignment"]
        assert rows[1:] == [["0", "1"], ["1", "0"], ["2", "0"], ["3", "1"]]
