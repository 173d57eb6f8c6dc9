import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fermat.density import GaussianMixture
from fermat.numerics import Rng, finite_diff_gradient, log_sum_exp, shuffle


class TestLogSumExp:
    def test_single_element_identity(self):
        assert log_sum_exp([3.7]) == 3.7

    def test_two_equal(self):
        assert log_sum_exp([0.0, 0.0]) == pytest.approx(np.log(2.0), abs=1e-15)

    def test_max_shift_prevents_overflow(self):
        assert log_sum_exp([1000.0, 1000.0]) == pytest.approx(1000.0 + np.log(2.0))

    def test_empty_is_error(self):
        with pytest.raises(ValueError, match="empty reduction"):
            log_sum_exp([])

    def test_all_log_zero(self):
        assert log_sum_exp([-np.inf, -np.inf]) == -np.inf

    def test_zero_magnitude_entries_ignored(self):
        assert log_sum_exp([-np.inf, 0.5]) == pytest.approx(0.5, abs=1e-15)

    @given(st.lists(st.floats(-300, 300), min_size=1, max_size=30))
    def test_dominates_max(self, values):
        result = log_sum_exp(values)
        assert result >= max(values) - 1e-12

    @given(st.lists(st.floats(-15, 15), min_size=2, max_size=30))
    def test_strictly_above_max_with_two_finite(self, values):
        # strict inequality needs the second-largest term to survive rounding
        assert log_sum_exp(values) > max(values)

    @given(
        st.lists(st.floats(-100, 100), min_size=1, max_size=20),
        st.floats(-500, 500),
    )
    def test_shift_invariance(self, values, c):
        shifted = log_sum_exp(np.asarray(values) + c)
        assert shifted == pytest.approx(log_sum_exp(values) + c, abs=1e-9)


class TestRng:
    def test_same_seed_same_stream(self):
        a = Rng(12345).standard_normal(100)
        b = Rng(12345).standard_normal(100)
        assert np.array_equal(a, b)

    def test_children_are_consumption_independent(self):
        r1 = Rng(7)
        r1.standard_normal(50)  # consume parent
        c1 = r1.child(3).standard_normal(10)
        c2 = Rng(7).child(3).standard_normal(10)
        assert np.array_equal(c1, c2)

    def test_distinct_children_differ(self):
        a = Rng(7).child(0).standard_normal(10)
        b = Rng(7).child(1).standard_normal(10)
        assert not np.array_equal(a, b)

    def test_nested_child_paths(self):
        a = Rng(7).child(1).child(2).standard_normal(4)
        b = Rng(7).child(1, 2).standard_normal(4)
        assert np.array_equal(a, b)


class TestShuffle:
    def test_empty(self):
        assert shuffle([], Rng(0)).tolist() == []

    def test_singleton(self):
        assert shuffle([5], Rng(0)).tolist() == [5]

    def test_replay_with_same_seed(self):
        first = shuffle([1, 2, 3], Rng(42)).tolist()
        second = shuffle([1, 2, 3], Rng(42)).tolist()
        assert first == second

    @given(st.lists(st.integers(-100, 100), max_size=50), st.integers(0, 2**32 - 1))
    @settings(max_examples=50)
    def test_preserves_multiset(self, items, seed):
        result = shuffle(items, Rng(seed))
        assert sorted(result.tolist()) == sorted(items)


class TestFiniteDiffGradient:
    def test_constant_field(self):
        g = finite_diff_gradient(lambda x: 4.2, np.array([1.0, -2.0, 0.5]))
        assert np.allclose(g, 0.0, atol=1e-9)

    def test_quadratic(self):
        g = finite_diff_gradient(lambda x: -0.5 * x @ x, np.array([1.0, 2.0]))
        assert np.allclose(g, [-1.0, -2.0], atol=1e-7)

    def test_matches_gmm_score(self):
        gmm = GaussianMixture(
            [0.3, 0.7],
            [[0.0, 0.0], [2.0, 1.0]],
            [np.eye(2), [[1.5, 0.4], [0.4, 0.8]]],
        )
        x = np.array([0.7, -0.3])
        g = finite_diff_gradient(gmm.log_density, x)
        s = gmm.score(x)
        assert np.linalg.norm(g - s) <= 1e-5 * max(1.0, np.linalg.norm(s))

    def test_nonfinite_evaluation_names_point(self):
        def f(x):
            return np.inf if x[0] > 1.0 else 0.0

        with pytest.raises(ValueError, match="non-finite evaluation"):
            finite_diff_gradient(f, np.array([1.0, 0.0]))

    def test_nonpositive_step_rejected(self):
        with pytest.raises(ValueError, match="positive"):
            finite_diff_gradient(lambda x: 0.0, np.zeros(2), h=0.0)
