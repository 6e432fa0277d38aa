import numpy as np
import pytest
from hypothesis import given, strategies as st

from moc import linalg
from moc.errors import DimensionMismatch, NonFiniteValue, NormTooSmall

finite_floats = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False, allow_infinity=False)
vectors = st.lists(finite_floats, min_size=1, max_size=32).map(np.asarray)


class TestNormalize:
    def test_unit_output(self):
        v = linalg.l2_normalize(np.array([3.0, 4.0]))
        np.testing.assert_allclose(v, [0.6, 0.8], rtol=0, atol=1e-15)

    def test_zero_vector_rejected(self):
        with pytest.raises(NormTooSmall):
            linalg.l2_normalize(np.zeros(4))

    def test_tiny_vector_rejected(self):
        with pytest.raises(NormTooSmall):
            linalg.l2_normalize(np.full(3, 1e-13))

    @given(vectors.filter(lambda v: np.linalg.norm(v) > 1e-6))
    def test_idempotent(self, v):
        once = linalg.l2_normalize(v)
        twice = linalg.l2_normalize(once)
        np.testing.assert_allclose(twice, once, atol=1e-12)
        assert abs(np.linalg.norm(once) - 1.0) < 1e-12

    def test_rows_match_per_row(self):
        rng = np.random.default_rng(0)
        m = rng.standard_normal((7, 5))
        rows = linalg.l2_normalize_rows(m)
        for i in range(7):
            np.testing.assert_allclose(rows[i], linalg.l2_normalize(m[i]), atol=1e-15)

    def test_non_finite_rejected(self):
        with pytest.raises(NonFiniteValue):
            linalg.as_vector(np.array([1.0, np.nan]))
        with pytest.raises(NonFiniteValue):
            linalg.as_matrix(np.array([[1.0, np.inf]]))

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatch):
            linalg.as_vector(np.ones((2, 2)))
        with pytest.raises(DimensionMismatch):
            linalg.as_matrix(np.ones(3))


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(linalg.softmax(np.zeros(4)), np.full(4, 0.25), atol=1e-15)

    def test_shift_invariance(self):
        z = np.array([0.3, -1.2, 2.0])
        np.testing.assert_allclose(linalg.softmax(z), linalg.softmax(z + 123.0), atol=1e-12)

    def test_extreme_logits_stable(self):
        p = linalg.softmax(np.array([1000.0, 0.0, -1000.0]))
        assert np.isfinite(p).all()
        np.testing.assert_allclose(p[0], 1.0, atol=1e-12)

    @given(st.lists(finite_floats, min_size=1, max_size=16))
    def test_simplex(self, values):
        p = linalg.softmax(np.asarray(values))
        assert (p >= 0).all()
        assert abs(p.sum() - 1.0) < 1e-12

    def test_rows_match_per_row(self):
        rng = np.random.default_rng(1)
        m = rng.standard_normal((6, 4))
        rows = linalg.softmax_rows(m)
        for i in range(6):
            np.testing.assert_allclose(rows[i], linalg.softmax(m[i]), atol=1e-15)


class TestTopK:
    def test_basic(self):
        idx = linalg.top_k_indices(np.array([0.1, 0.9, 0.5]), 2)
        assert idx.tolist() == [1, 2]

    def test_k_exceeds_length(self):
        idx = linalg.top_k_indices(np.array([3.0, 1.0]), 10)
        assert idx.tolist() == [0, 1]

    def test_ties_take_lowest_index(self):
        idx = linalg.top_k_indices(np.array([1.0, 1.0, 1.0, 1.0]), 2)
        assert idx.tolist() == [0, 1]

    @given(st.lists(finite_floats, min_size=1, max_size=40), st.integers(1, 45))
    def test_matches_full_sort(self, values, k):
        arr = np.asarray(values)
        got = linalg.top_k_indices(arr, k)
        # oracle: stable sort of (-value, index) pairs
        expected = sorted(range(arr.shape[0]), key=lambda i: (-arr[i], i))[: min(k, arr.shape[0])]
        assert got.tolist() == expected
