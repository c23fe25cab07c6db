import numpy as np
import pytest

from vulnrank.errors import ContractViolation
from vulnrank.similarity import (
    cosine,
    cosine_row_sums,
    pairwise_submatrix,
    read_row_sums_csv,
    write_row_sums_csv,
)


def naive_row_sums(X):
    """O(N^2) oracle: cosine of every pair via the scalar definition."""
    n = X.shape[0]
    sums = np.zeros(n)
    for i in range(n):
        for j in range(n):
            sums[i] += cosine(X[i], X[j])
    return sums


class TestCosine:
    def test_self_similarity_is_one(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            v = rng.normal(size=6)
            assert cosine(v, v) == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal_is_zero(self):
        assert cosine((1, 0), (0, 1)) == 0.0

    def test_hand_computed_45_degrees(self):
        assert cosine((1, 1), (1, 0)) == pytest.approx(0.7071, abs=1e-4)

    def test_zero_vector_defined_as_zero(self, caplog):
        with caplog.at_level("WARNING"):
            assert cosine((0, 0), (1, 2)) == 0.0
        assert any("zero vector" in m for m in caplog.messages)

    def test_always_in_unit_interval(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            u, v = rng.normal(size=(2, 4)) * rng.uniform(0.01, 100)
            assert -1.0 <= cosine(u, v) <= 1.0


class TestRowSums:
    def test_single_row(self):
        assert cosine_row_sums(np.array([[3.0, 4.0]])) == pytest.approx([1.0])

    def test_two_identical_rows(self):
        X = np.array([[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]])
        np.testing.assert_allclose(cosine_row_sums(X), [2.0, 2.0], atol=1e-12)

    def test_matches_naive_oracle_small(self):
        rng = np.random.default_rng(11)
        X = rng.normal(size=(10, 4))
        np.testing.assert_allclose(cosine_row_sums(X), naive_row_sums(X), atol=1e-9)

    def test_blocked_equals_naive_on_random_instances(self):
        rng = np.random.default_rng(2024)
        for trial in range(50):
            n = int(rng.integers(1, 201))
            d = int(rng.integers(1, 65))
            X = rng.normal(size=(n, d)) * rng.uniform(0.1, 10)
            block = int(rng.integers(1, n + 1))
            got = cosine_row_sums(X, block_size=block)
            np.testing.assert_allclose(got, naive_row_sums(X), atol=1e-6)

    def test_block_size_independent(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(57, 8))
        base = cosine_row_sums(X, block_size=57)
        for block in (1, 2, 7, 16, 100):
            np.testing.assert_allclose(cosine_row_sums(X, block_size=block), base, atol=1e-6)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(6)
        X = rng.normal(size=(20, 5))
        perm = rng.permutation(20)
        np.testing.assert_allclose(
            cosine_row_sums(X[perm]), cosine_row_sums(X)[perm], atol=1e-9
        )

    def test_entries_in_stated_range(self):
        rng = np.random.default_rng(7)
        X = rng.normal(size=(30, 6))
        sums = cosine_row_sums(X)
        n = X.shape[0]
        assert np.all(sums >= -(n - 1) + 1 - 1e-9)
        assert np.all(sums <= n + 1e-9)

    def test_zero_row_contributes_zero(self):
        X = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
        sums = cosine_row_sums(X)
        assert sums[0] == pytest.approx(0.0, abs=1e-12)
        assert sums[1] == pytest.approx(2.0, abs=1e-12)


class TestSubmatrix:
    def test_singleton(self):
        X = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(pairwise_submatrix(X, [1]), [[1.0]])

    def test_exact_symmetry_and_unit_diagonal(self):
        rng = np.random.default_rng(8)
        X = rng.normal(size=(12, 5))
        M = pairwise_submatrix(X, [0, 3, 7, 11])
        assert (M == M.T).all()
        np.testing.assert_array_equal(np.diag(M), np.ones(4))
        assert np.all(M >= -1.0) and np.all(M <= 1.0)

    def test_hand_computed_three_vectors(self):
        X = np.array([[1.0, 0.0], [0.0, 2.0], [1.0, 1.0]])
        M = pairwise_submatrix(X, [0, 1, 2])
        s = 1.0 / np.sqrt(2.0)
        expected = np.array([[1.0, 0.0, s], [0.0, 1.0, s], [s, s, 1.0]])
        np.testing.assert_allclose(M, expected, atol=1e-9)

    def test_unknown_id_rejected(self):
        X = np.zeros((3, 2))
        with pytest.raises(ContractViolation):
            pairwise_submatrix(X, [0, 5])

    def test_duplicate_ids_rejected(self):
        X = np.ones((3, 2))
        with pytest.raises(ContractViolation):
            pairwise_submatrix(X, [1, 1])


class TestCsv:
    def test_row_sums_round_trip(self, tmp_path):
        path = tmp_path / "sums.csv"
        write_row_sums_csv([0, 1, 2], np.array([1.5, -0.25, 3.0]), path)
        ids, sums = read_row_sums_csv(path)
        assert ids == [0, 1, 2]
        np.testing.assert_array_equal(sums, [1.5, -0.25, 3.0])
