import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from pvfcure import (
    BaselineParams,
    CountingParams,
    DomainError,
    FrailtyParams,
    ParamVector,
    baseline_hazard,
    cumulative_baseline_hazard,
    cure_rate,
    frailty_marginal_density,
    frailty_marginal_survival,
    negbin_pgf,
    negbin_pmf,
    population_density,
    population_survival,
)
from pvfcure.model import invert_population_survival

from conftest import central_difference

UNIT = BaselineParams(0.0, 1.0)


class TestBaseline:
    def test_exponential_identity(self):
        assert cumulative_baseline_hazard(1.0, UNIT) == 1.0

    def test_zero_time(self):
        assert cumulative_baseline_hazard(0.0, BaselineParams(3.2, 0.7)) == 0.0

    def test_arithmetic(self):
        assert cumulative_baseline_hazard(2.0, BaselineParams(0.5, 1.5)) == pytest.approx(math.exp(0.5) * 2**1.5, rel=1e-14)

    def test_negative_time_rejected(self):
        with pytest.raises(DomainError):
            cumulative_baseline_hazard(-1.0, UNIT)

    def test_hazard_values(self):
        assert baseline_hazard(1.0, UNIT) == 1.0
        assert baseline_hazard(4.0, BaselineParams(0.0, 2.0)) == pytest.approx(8.0)

    def test_hazard_needs_positive_time(self):
        with pytest.raises(DomainError):
            baseline_hazard(0.0, BaselineParams(0.0, 0.5))

    def test_hazard_diverges_near_zero_for_shape_below_one(self):
        p = BaselineParams(0.0, 0.5)
        assert baseline_hazard(1e-12, p) > 1e5 * baseline_hazard(1.0, p)

    @pytest.mark.parametrize("t", [0.1, 1.0, 3.7])
    def test_hazard_is_derivative(self, t):
        p = BaselineParams(-0.3, 1.7)
        fd = central_difference(lambda s: cumulative_baseline_hazard(s, p), t, 1e-6)
        assert baseline_hazard(t, p) == pytest.approx(fd, rel=1e-7)

    def test_nonpositive_shape_rejected(self):
        with pytest.raises(DomainError):
            cumulative_baseline_hazard(1.0, BaselineParams(0.0, 0.0))


class TestFrailtyMarginal:
    def test_survival_at_zero(self):
        assert frailty_marginal_survival(0.0, BaselineParams(1.0, 2.0), FrailtyParams(0.3, 2.0)) == 1.0

    def test_inverse_gaussian_point(self):
        # inner term 1 + 1/0.5 = 3, prefactor (1-g)/(g s2) = 1
        expected = math.exp(1.0 - math.sqrt(3.0))
        assert frailty_marginal_survival(1.0, UNIT, FrailtyParams(0.5, 1.0)) == pytest.approx(expected, abs=1e-12)

    def test_density_point(self):
        expected = 3.0**-0.5 * math.exp(1.0 - math.sqrt(3.0))
        assert frailty_marginal_density(1.0, UNIT, FrailtyParams(0.5, 1.0)) == pytest.approx(expected, abs=1e-12)

    @pytest.mark.parametrize("gamma", [1e-6, 1e-7])
    @pytest.mark.parametrize("sigma2", [0.5, 1.0, 2.0])
    def test_gamma_frailty_limit(self, gamma, sigma2):
        p = BaselineParams(0.2, 1.3)
        t = np.array([0.1, 0.5, 1.0, 3.0, 10.0])
        h = math.exp(0.2) * t**1.3
        closed = (1.0 + sigma2 * h) ** (-1.0 / sigma2)
        got = frailty_marginal_survival(t, p, FrailtyParams(gamma, sigma2))
        np.testing.assert_allclose(got, closed, rtol=1e-5)

    def test_gamma_limit_half_example(self):
        assert frailty_marginal_survival(1.0, UNIT, FrailtyParams(1e-6, 1.0)) == pytest.approx(0.5, rel=1e-5)

    def test_gamma_limit_branch_continuous(self):
        p = BaselineParams(0.0, 1.0)
        t = np.linspace(0.1, 5, 7)
        below = frailty_marginal_survival(t, p, FrailtyParams(0.99e-5, 1.5))
        above = frailty_marginal_survival(t, p, FrailtyParams(1.01e-5, 1.5))
        np.testing.assert_allclose(below, above, rtol=1e-5)

    def test_no_frailty_limit(self):
        t = np.array([0.2, 1.0, 4.0])
        np.testing.assert_allclose(frailty_marginal_survival(t, UNIT, FrailtyParams(0.5, 1e-10)), np.exp(-t), rtol=1e-14)
        np.testing.assert_allclose(frailty_marginal_density(t, UNIT, FrailtyParams(0.5, 1e-10)), np.exp(-t), rtol=1e-14)

    def test_small_variance_close_to_limit_from_above(self):
        t = np.array([0.2, 1.0, 4.0])
        near = frailty_marginal_survival(t, UNIT, FrailtyParams(0.5, 1e-7))
        np.testing.assert_allclose(near, np.exp(-t), rtol=1e-6)

    @settings(max_examples=60, deadline=None)
    @given(
        alpha=st.floats(-2, 2),
        lam=st.floats(0.3, 3),
        gamma=st.floats(0.01, 0.99),
        sigma2=st.floats(0.01, 5),
        t=st.floats(0.05, 20),
    )
    def test_density_is_minus_survival_derivative(self, alpha, lam, gamma, sigma2, t):
        p, f = BaselineParams(alpha, lam), FrailtyParams(gamma, sigma2)
        h = 1e-5 * max(t, 1.0)
        fd = -central_difference(lambda s: frailty_marginal_survival(s, p, f), t, h)
        dens = frailty_marginal_density(t, p, f)
        assert dens == pytest.approx(fd, rel=1e-6, abs=1e-12)

    def test_density_integrates_to_one(self):
        p, f = BaselineParams(-0.2, 1.4), FrailtyParams(0.3, 1.2)
        total, _ = integrate.quad(lambda t: frailty_marginal_density(t, p, f), 0, np.inf, limit=200)
        assert total == pytest.approx(1.0, abs=1e-6)

    def test_survival_strictly_decreasing(self):
        t = np.linspace(0, 30, 300)
        s = frailty_marginal_survival(t, BaselineParams(0.0, 1.0), FrailtyParams(0.9, 2.0))
        assert np.all(np.diff(s) < 0)
        assert np.all((s > 0) & (s <= 1))

    def test_invalid_gamma(self):
        with pytest.raises(DomainError):
            frailty_marginal_survival(1.0, UNIT, FrailtyParams(1.0, 1.0))


class TestNegativeBinomial:
    def test_pgf_at_one(self):
        assert negbin_pgf(1.0, CountingParams(0.7, 3.0)) == 1.0

    def test_pgf_at_zero_is_cure_rate(self):
        theta = math.exp(-0.5)
        expected = (1 + 0.5 * theta) ** -2
        assert negbin_pgf(0.0, CountingParams(0.5, theta)) == pytest.approx(expected, rel=1e-14)
        assert round(expected, 2) == 0.59

    def test_pgf_poisson_limit(self):
        assert negbin_pgf(0.5, CountingParams(1e-10, 2.0)) == pytest.approx(math.exp(-1.0), rel=1e-12)

    def test_pgf_domain(self):
        with pytest.raises(DomainError):
            negbin_pgf(1.5, CountingParams(0.5, 1.0))

    def test_pgf_monotone(self):
        s = np.linspace(0, 1, 50)
        assert np.all(np.diff(negbin_pgf(s, CountingParams(2.0, 1.5))) > 0)

    def test_geometric_special_case(self):
        c = CountingParams(1.0, 1.0)
        assert negbin_pmf(0, c) == pytest.approx(0.5)
        assert negbin_pmf(1, c) == pytest.approx(0.25)

    def test_gamma_formula_point(self):
        # Gamma(4) / (2! Gamma(2)) * (1/2)^2 * 2^-2 = 3/16
        assert negbin_pmf(2, CountingParams(0.5, 2.0)) == pytest.approx(3.0 / 16.0, rel=1e-12)

    @pytest.mark.parametrize("eta,theta", [(0.5, 2.0), (0.5, math.exp(0.2)), (2.0, 0.7), (1e-10, 1.3)])
    @pytest.mark.parametrize("s", [0.0, 0.25, 0.5, 0.75, 1.0])
    def test_partial_sums_reproduce_pgf(self, eta, theta, s):
        c = CountingParams(eta, theta)
        n = np.arange(501)
        series = np.sum(negbin_pmf(n, c) * s**n)
        assert series == pytest.approx(negbin_pgf(s, c), abs=1e-10)

    def test_moments(self):
        c = CountingParams(0.8, 2.5)
        n = np.arange(2000)
        p = negbin_pmf(n, c)
        mean = np.sum(n * p)
        assert mean == pytest.approx(2.5, rel=1e-10)
        assert np.sum((n - mean) ** 2 * p) == pytest.approx(2.5 + 0.8 * 2.5**2, rel=1e-8)


class TestPopulation:
    def test_survival_at_zero(self, truth):
        assert population_survival(0.0, truth, [1, 1]) == 1.0

    def test_tail_tends_to_cure_rate(self, truth):
        far = population_survival(1e8, truth, [1, 0])
        assert far == pytest.approx(cure_rate(truth, [1, 0]), abs=1e-12)
        assert round(far, 4) == 0.5888

    @pytest.mark.parametrize("x,expected", [((1, 0), 0.59), ((1, 1), 0.39)])
    def test_cure_rates_match_reported_values(self, truth, x, expected):
        assert round(cure_rate(truth, x), 2) == expected

    def test_cure_rate_exact(self, truth):
        assert cure_rate(truth, [1, 0]) == pytest.approx((1 + 0.5 * math.exp(-0.5)) ** -2, rel=1e-14)
        assert cure_rate(truth, [1, 1]) == pytest.approx((1 + 0.5 * math.exp(0.2)) ** -2, rel=1e-14)

    def test_cure_rate_poisson_limit(self):
        v = ParamVector(UNIT, None, 1e-10, [0.0])
        assert cure_rate(v, [1]) == pytest.approx(math.exp(-1), rel=1e-9)

    def test_cure_rate_decreasing_in_theta(self):
        v = lambda b: ParamVector(UNIT, None, 0.8, [b])  # noqa: E731
        vals = [cure_rate(v(b), [1]) for b in np.linspace(-2, 2, 9)]
        assert np.all(np.diff(vals) < 0)

    def test_nested_cr_model(self):
        t = np.array([0.1, 0.5, 1.0, 2.0, 8.0])
        base = BaselineParams(0.3, 1.2)
        tiny = ParamVector(base, FrailtyParams(0.4, 1e-9), 0.7, [0.2])
        theta = math.exp(0.2)
        eq3 = (1 + 0.7 * theta * (1 - np.exp(-math.exp(0.3) * t**1.2))) ** (-1 / 0.7)
        np.testing.assert_allclose(population_survival(t, tiny, [1.0]), eq3, rtol=1e-8)
        cr = ParamVector(base, None, 0.7, [0.2])
        np.testing.assert_allclose(population_survival(t, cr, [1.0]), eq3, rtol=1e-12)

    def test_promotion_time_poisson_density(self):
        t = np.array([0.3, 1.0, 2.5])
        v = ParamVector(UNIT, FrailtyParams(0.5, 1e-10), 1e-10, [0.4])
        theta = math.exp(0.4)
        expected = theta * np.exp(-t) * np.exp(-theta * (1 - np.exp(-t)))
        np.testing.assert_allclose(population_density(t, v, [1.0]), expected, rtol=1e-9)

    def test_density_integrates_to_one_minus_cure(self, truth):
        x = [1, 1]
        total, _ = integrate.quad(lambda t: population_density(t, truth, x), 0, np.inf, limit=200)
        assert total == pytest.approx(1 - cure_rate(truth, x), abs=1e-4)

    def test_density_requires_positive_time(self, truth):
        with pytest.raises(DomainError):
            population_density(0.0, truth, [1, 0])

    def test_inverse_gaussian_needs_no_special_case(self):
        v = ParamVector(UNIT, FrailtyParams(0.5, 2.0), 0.5, [0.0])
        s = population_survival(np.linspace(0, 10, 11), v, [1.0])
        assert np.all(np.isfinite(s))

    @settings(max_examples=40, deadline=None)
    @given(
        alpha=st.floats(-1.5, 1.5),
        lam=st.floats(0.4, 2.5),
        gamma=st.floats(0.02, 0.98),
        sigma2=st.floats(0.05, 3),
        eta=st.floats(0.05, 4),
        b0=st.floats(-1.5, 1.5),
        grid=st.lists(st.floats(0, 50), min_size=2, max_size=30),
    )
    def test_survival_bounded_and_monotone(self, alpha, lam, gamma, sigma2, eta, b0, grid):
        v = ParamVector(BaselineParams(alpha, lam), FrailtyParams(gamma, sigma2), eta, [b0])
        t = np.sort(np.asarray(grid))
        s = population_survival(t, v, [1.0])
        assert np.all((s > 0) & (s <= 1))
        assert np.all(np.diff(s) <= 1e-15)
        assert np.all(s >= cure_rate(v, [1.0]) - 1e-15)

    def test_round_trip_inverse(self, truth):
        x = [1, 1]
        p0 = cure_rate(truth, x)
        u = np.linspace(p0 + 1e-6, 1.0, 40)
        t = invert_population_survival(u, truth, x)
        np.testing.assert_allclose(population_survival(t, truth, x), u, atol=1e-12)

    def test_inverse_rejects_below_cure_rate(self, truth):
        with pytest.raises(DomainError):
            invert_population_survival(0.1, truth, [1, 0])
