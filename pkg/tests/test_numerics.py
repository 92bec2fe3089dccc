import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sgha.errors import DegenerateInputError, EvaluationError, ParameterError
from sgha.numerics import (
    cosine_distance,
    cosine_distance_grad,
    gradient_check,
    mean_pool_rows,
    softmax_temperature,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
nonzero_vec = arrays(np.float64, st.integers(1, 8), elements=finite).filter(lambda v: np.linalg.norm(v) > 1e-3)


class TestCosineDistance:
    def test_identity(self):
        v = np.array([0.3, -1.2, 4.0])
        assert cosine_distance(v, v) == pytest.approx(0.0, abs=1e-15)

    def test_antipodal(self):
        v = np.array([0.3, -1.2, 4.0])
        assert cosine_distance(v, -v) == pytest.approx(2.0, abs=1e-15)

    def test_orthogonal(self):
        assert cosine_distance([1.0, 0.0], [0.0, 1.0]) == 1.0

    def test_zero_norm_is_an_error(self):
        with pytest.raises(DegenerateInputError):
            cosine_distance([0.0, 0.0], [1.0, 2.0])
        with pytest.raises(DegenerateInputError):
            cosine_distance([1.0, 2.0], np.zeros(2))

    def test_length_mismatch(self):
        with pytest.raises(ParameterError):
            cosine_distance([1.0, 2.0], [1.0])

    @given(nonzero_vec, st.data())
    def test_range_and_symmetry(self, a, data):
        b = data.draw(arrays(np.float64, a.shape, elements=finite).filter(lambda v: np.linalg.norm(v) > 1e-3))
        d = cosine_distance(a, b)
        assert 0.0 <= d <= 2.0
        assert d == pytest.approx(cosine_distance(b, a), abs=1e-12)

    @given(nonzero_vec, st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
    def test_scale_invariance(self, a, lam, mu):
        b = np.roll(a, 1) + 0.5
        if np.linalg.norm(b) < 1e-3:
            return
        assert cosine_distance(lam * a, mu * b) == pytest.approx(cosine_distance(a, b), abs=1e-12)

    def test_gradient_matches_finite_differences(self, rng):
        a, b = rng.normal(size=5), rng.normal(size=5)
        _, ga, gb = cosine_distance_grad(a, b)
        h = 1e-6
        for i in range(5):
            e = np.zeros(5)
            e[i] = h
            na = (cosine_distance(a + e, b) - cosine_distance(a - e, b)) / (2 * h)
            nb = (cosine_distance(a, b + e) - cosine_distance(a, b - e)) / (2 * h)
            assert ga[i] == pytest.approx(na, rel=1e-6, abs=1e-9)
            assert gb[i] == pytest.approx(nb, rel=1e-6, abs=1e-9)


class TestSoftmaxTemperature:
    def test_equal_scores_are_uniform(self):
        np.testing.assert_allclose(softmax_temperature([0.4, 0.4, 0.4], 2.0), [1 / 3] * 3, rtol=0, atol=1e-15)

    def test_single_score(self):
        assert softmax_temperature([0.7], 5.0).tolist() == [1.0]

    def test_against_high_precision_oracle(self):
        mpmath.mp.dps = 50
        scores = [mpmath.mpf("0.9"), mpmath.mpf("0.7"), mpmath.mpf("0.5")]
        ex = [mpmath.exp(s / 5) for s in scores]
        oracle = [float(e / sum(ex)) for e in ex]
        np.testing.assert_allclose(softmax_temperature([0.9, 0.7, 0.5], 5.0), oracle, rtol=1e-14)

    @pytest.mark.parametrize("tau", [0.0, -1.0, float("nan"), float("inf")])
    def test_bad_temperature(self, tau):
        with pytest.raises(ParameterError):
            softmax_temperature([0.1, 0.2], tau)

    def test_non_finite_scores(self):
        with pytest.raises(ParameterError):
            softmax_temperature([0.1, np.inf], 1.0)

    @given(arrays(np.float64, st.integers(1, 12), elements=finite), st.floats(1e-3, 1e3))
    @settings(max_examples=200)
    def test_normalized_positive_and_ordered(self, s, tau):
        w = softmax_temperature(s, tau)
        assert abs(w.sum() - 1.0) <= 1e-9
        assert np.all(w >= 0)
        for i in range(len(s)):
            for j in range(len(s)):
                if s[i] > s[j]:
                    assert w[i] >= w[j]

    @given(arrays(np.float64, st.integers(2, 8), elements=st.integers(-100, 100).map(lambda i: i / 100)),
           st.floats(0.1, 10))
    def test_strict_positivity_and_monotonicity_at_moderate_range(self, s, tau):
        w = softmax_temperature(s, tau)
        assert np.all(w > 0)
        for i in range(len(s)):
            for j in range(len(s)):
                if s[i] > s[j]:
                    assert w[i] > w[j]

    @given(arrays(np.float64, st.integers(1, 8), elements=st.floats(-10, 10)), st.floats(-100, 100))
    def test_shift_invariance(self, s, c):
        np.testing.assert_allclose(softmax_temperature(s + c, 3.0), softmax_temperature(s, 3.0), rtol=1e-9, atol=1e-12)


class TestMeanPoolRows:
    def test_single_row(self):
        np.testing.assert_array_equal(mean_pool_rows([[1.5, -2.0, 3.0]]), [1.5, -2.0, 3.0])

    def test_cancellation(self):
        v = np.array([0.25, -4.0])
        np.testing.assert_array_equal(mean_pool_rows([v, -v]), [0.0, 0.0])

    def test_naive_loop_oracle(self, rng):
        m = rng.normal(size=(3, 2))
        oracle = []
        for j in range(2):
            acc = 0.0
            for i in range(3):
                acc += m[i, j]
            oracle.append(acc / 3)
        np.testing.assert_allclose(mean_pool_rows(m), oracle, rtol=1e-15)

    def test_empty(self):
        with pytest.raises(ParameterError):
            mean_pool_rows(np.zeros((0, 3)))


class TestGradientCheck:
    def test_linear_sum(self):
        # dyadic pixel values and step keep every finite difference exact
        x = np.arange(8 * 8 * 3).reshape(8, 8, 3) / 256.0
        rep = gradient_check(lambda z: (z.sum(), np.ones_like(z)), x, step=2.0**-6)
        assert rep.coordinates_checked == 64
        assert rep.max_relative_error < 1e-10

    def test_quadratic(self, rng):
        x = rng.uniform(size=(5, 5, 3))
        rep = gradient_check(lambda z: (0.5 * np.sum(z * z), z.copy()), x, step=1e-5, n_coords=x.size)
        assert rep.coordinates_checked == x.size
        assert rep.max_relative_error < 1e-6

    def test_detects_wrong_gradient(self, rng):
        x = rng.uniform(size=(4, 4, 3))
        rep = gradient_check(lambda z: (0.5 * np.sum(z * z), 2 * z), x)
        assert rep.max_relative_error > 0.4

    def test_non_finite_objective(self):
        with pytest.raises(EvaluationError):
            gradient_check(lambda z: (float("nan"), np.zeros_like(z)), np.zeros((2, 2, 3)))

    def test_bad_step(self):
        with pytest.raises(ParameterError):
            gradient_check(lambda z: (0.0, np.zeros_like(z)), np.zeros((2, 2, 3)), step=0.0)
