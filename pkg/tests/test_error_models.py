import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ffpmbench.error_models import (
    ErrorBudget,
    aggregate_covariance,
    observed_order,
    richardson_fit,
)

spacing = st.lists(st.floats(1e-4, 1.0), min_size=3, max_size=6, unique=True).filter(
    lambda h: min(abs(a - b) for i, a in enumerate(h) for b in h[i + 1:]) > 1e-6)


class TestRichardson:
    def test_linear_exact(self):
        h = np.array([0.4, 0.2, 0.1])
        fit = richardson_fit(h, 1 + 2 * h, 1)
        assert fit.f_bar == pytest.approx(1.0, abs=1e-14)
        assert fit.e_p == pytest.approx(2.0, abs=1e-13)
        assert fit.residual < 1e-14

    def test_quadratic_exact(self):
        h = np.array([0.3, 0.15, 0.075])
        fit = richardson_fit(h, 3 - 0.5 * h**2, 2)
        assert fit.f_bar == pytest.approx(3.0, abs=1e-12)
        assert fit.e_p == pytest.approx(-0.5, abs=1e-12)

    def test_numerical_variance_uses_finest(self):
        h = np.array([0.1, 0.4, 0.2])
        f = 5 + 0.1 * h**2
        fit = richardson_fit(h, f, 2)
        assert fit.numerical_variance == pytest.approx((0.1 * 0.01) ** 2, rel=1e-8)

    def test_multi_output(self):
        h = np.array([0.4, 0.2, 0.1])
        f = np.column_stack([1 + h**2, -2 + 3 * h**2])
        fit = richardson_fit(h, f, 2)
        np.testing.assert_allclose(fit.f_bar, [1, -2], atol=1e-13)
        np.testing.assert_allclose(fit.e_p, [1, 3], atol=1e-12)
        assert fit.numerical_variance.shape == (2,)

    def test_errors(self):
        with pytest.raises(ValueError):
            richardson_fit([0.1, 0.1, 0.2], [1, 2, 3], 1)
        with pytest.raises(ValueError):
            richardson_fit([0.1, 0.2], [1, 2], 1)
        with pytest.raises(ValueError):
            richardson_fit([0.1, 0.2, 0.3], [1, 2, 3], 0.5)

    @settings(max_examples=50, deadline=None)
    @given(h=spacing, fbar=st.floats(-1e3, 1e3), e=st.floats(-1e3, 1e3),
           p=st.sampled_from([1.0, 2.0, 3.0]), c=st.floats(0.1, 10.0))
    def test_exact_family_and_scaling(self, h, fbar, e, p, c):
        h = np.asarray(h)
        f = fbar + e * h**p
        fit = richardson_fit(h, f, p)
        scale = max(1.0, abs(fbar), abs(e))
        assert abs(fit.f_bar - fbar) <= 1e-9 * scale
        assert fit.residual <= 1e-9 * scale
        scaled = richardson_fit(c * h, f, p)
        assert scaled.f_bar == pytest.approx(fit.f_bar, abs=1e-9 * scale)
        assert scaled.e_p == pytest.approx(fit.e_p * c ** (-p), rel=1e-7, abs=1e-9 * scale)


class TestObservedOrder:
    @pytest.mark.parametrize("p", [1.0, 2.0, 2.5])
    def test_recovers_order(self, p):
        h = np.array([0.2, 0.1, 0.05])
        got, fit = observed_order(h, 7 + 0.3 * h**p)
        assert got == pytest.approx(p, abs=1e-10)
        assert fit.f_bar == pytest.approx(7.0, abs=1e-10)

    def test_non_uniform_ratio(self):
        h = np.array([0.3, 0.17, 0.1, 0.04])
        got, _ = observed_order(h, 1 - 2 * h**2)
        assert got == pytest.approx(2.0, abs=1e-5)


class TestAggregate:
    def test_single_source(self):
        b = ErrorBudget(["velocity", "velocity", "pressure"], {"velocity": 1e-6, "pressure": 0.0})
        np.testing.assert_array_equal(aggregate_covariance(b), [1e-6, 1e-6, 0.0])

    def test_additivity(self):
        b = ErrorBudget(["pressure"], {"velocity": 0.0, "pressure": 0.25}, [0.5], [0.125])
        assert aggregate_covariance(b)[0] == 0.875

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            aggregate_covariance(ErrorBudget(["velocity"], {"velocity": -1.0}))
        with pytest.raises(ValueError):
            aggregate_covariance(ErrorBudget(["velocity"], {"velocity": 1.0}, mse=[-1e-9]))
        with pytest.raises(ValueError):
            aggregate_covariance(ErrorBudget(["velocity", "pressure"], {"velocity": 1.0}))

    def test_layout_mismatch(self):
        with pytest.raises(ValueError):
            aggregate_covariance(ErrorBudget(["velocity"] * 2, {"velocity": 1.0}, mse=[1.0, 2.0, 3.0]))

    def test_round_trip(self):
        b = ErrorBudget(["velocity", "pressure"], {"velocity": 1e-7, "pressure": 2e-4}, [1e-9, 0.0], 3e-8)
        back = ErrorBudget.from_dict(b.to_dict())
        np.testing.assert_array_equal(aggregate_covariance(back), aggregate_covariance(b))

    @settings(max_examples=40, deadline=None)
    @given(n=st.integers(1, 8), seed=st.integers(0, 10**6))
    def test_permutation_equivariance_and_additivity(self, n, seed):
        rng = np.random.default_rng(seed)
        kinds = list(rng.choice(["velocity", "pressure"], size=n))
        disc = {"velocity": rng.uniform(0, 1e-5), "pressure": rng.uniform(0, 1e-3)}
        num, mse = rng.uniform(0, 1e-6, n), rng.uniform(0, 1e-6, n)
        full = aggregate_covariance(ErrorBudget(kinds, disc, num, mse))
        parts = (aggregate_covariance(ErrorBudget(kinds, disc))
                 + aggregate_covariance(ErrorBudget(kinds, {"velocity": 0, "pressure": 0}, num))
                 + aggregate_covariance(ErrorBudget(kinds, {"velocity": 0, "pressure": 0}, 0.0, mse)))
        np.testing.assert_allclose(full, parts, rtol=1e-15)
        perm = rng.permutation(n)
        permuted = aggregate_covariance(ErrorBudget([kinds[i] for i in perm], disc, num[perm], mse[perm]))
        np.testing.assert_array_equal(permuted, full[perm])
