import math

import numpy as np
import pytest

from dpn import cosine_similarity, euclidean_distance, softmax
from dpn.exceptions import DimensionError, EmptyInputError, NonFiniteError, ZeroNormError
from helpers import fsum_euclidean


class TestEuclideanDistance:
    def test_identical_points(self):
        assert euclidean_distance([0.0, 0.0], [0.0, 0.0]) == 0.0

    def test_three_four_five(self):
        assert euclidean_distance([0.0, 0.0], [3.0, 4.0]) == 5.0

    def test_matches_high_precision_summation(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            a = rng.normal(scale=3.0, size=16)
            b = rng.normal(scale=3.0, size=16)
            expected = fsum_euclidean(a, b)
            assert abs(euclidean_distance(a, b) - expected) <= 1e-12 * max(1.0, expected)

    def test_symmetric(self):
        rng = np.random.default_rng(7)
        a, b = rng.normal(size=8), rng.normal(size=8)
        assert euclidean_distance(a, b) == euclidean_distance(b, a)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            euclidean_distance([1.0, 2.0], [1.0, 2.0, 3.0])

    def test_non_finite_rejected(self):
        with pytest.raises(NonFiniteError):
            euclidean_distance([np.nan, 0.0], [0.0, 0.0])


class TestCosineSimilarity:
    def test_identical_direction(self):
        assert cosine_similarity([1.0, 0.0], [1.0, 0.0]) == 1.0

    def test_orthogonal(self):
        assert cosine_similarity([1.0, 0.0], [0.0, 1.0]) == 0.0

    def test_opposite_direction(self):
        assert cosine_similarity([1.0, 0.0], [-2.0, 0.0]) == -1.0

    def test_scale_invariant(self):
        rng = np.random.default_rng(3)
        a, b = rng.normal(size=6), rng.normal(size=6)
        assert cosine_similarity(a, b) == pytest.approx(cosine_similarity(5.0 * a, 0.25 * b), abs=1e-12)

    def test_zero_norm_raises(self):
        with pytest.raises(ZeroNormError):
            cosine_similarity([0.0, 0.0], [1.0, 0.0])
        with pytest.raises(ZeroNormError):
            cosine_similarity([1.0, 0.0], [0.0, 0.0])

    def test_bounded(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            a, b = rng.normal(size=4), rng.normal(size=4)
            assert -1.0 <= cosine_similarity(a, b) <= 1.0

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            cosine_similarity([1.0], [1.0, 2.0])


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(softmax([0.0, 0.0, 0.0]), [1 / 3, 1 / 3, 1 / 3], atol=1e-15)

    @pytest.mark.parametrize("c", [0.0, -7.5, 3.25, 1000.0])
    def test_log_two_gap(self, c):
        # scores (c, c + ln 2) keep the analytic ratio 1:2 for any offset
        out = softmax([c, c + math.log(2.0)])
        np.testing.assert_allclose(out, [1 / 3, 2 / 3], atol=1e-12)

    def test_large_scores_do_not_overflow(self):
        out = softmax([1000.0, 0.0])
        assert np.isfinite(out).all()
        assert out[0] == pytest.approx(1.0)
        assert out[1] == pytest.approx(0.0, abs=1e-300)

    def test_shift_invariance(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            s = rng.normal(scale=5.0, size=rng.integers(1, 9))
            c = rng.uniform(-1000.0, 1000.0)
            np.testing.assert_allclose(softmax(s + c), softmax(s), atol=1e-12)

    def test_sums_to_one(self):
        rng = np.random.default_rng(9)
        for _ in range(300):
            s = rng.normal(scale=10.0, size=rng.integers(1, 12))
            out = softmax(s)
            assert np.all(out > 0)
            assert abs(out.sum() - 1.0) <= 1e-12

    def test_empty_raises(self):
        with pytest.raises(EmptyInputError):
            softmax([])

    def test_non_finite_raises(self):
        with pytest.raises(NonFiniteError):
            softmax([np.inf, 0.0])
