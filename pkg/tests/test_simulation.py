import math

import numpy as np
import pytest

from pvfcure import population_survival
from pvfcure.sampler import SamplerConfig
from pvfcure.simulation import PROFILES, ScenarioSpec, aggregate, generate_dataset, run_study

from conftest import kaplan_meier

TINY = {"pvfcr": SamplerConfig(600, 200, 4), "cr": SamplerConfig(600, 200, 4)}


@pytest.fixture(scope="module")
def big():
    s = ScenarioSpec(0.5, 1.0, 20000, seed=7)
    data, latent = generate_dataset(s, 0)
    return s, data, latent


class TestScenario:
    def test_true_cure_rates(self):
        p = ScenarioSpec(0.1, 0.5, 100).true_cure_rates()
        assert p["p00"] == pytest.approx((1 + 0.5 * math.exp(-0.5)) ** -2)
        assert p["p01"] == pytest.approx((1 + 0.5 * math.exp(0.2)) ** -2)

    def test_censoring_rate_verbatim(self):
        s = ScenarioSpec(0.1, 0.5, 100)
        p0 = np.array([0.5888, 0.3855])
        np.testing.assert_allclose(s.censoring_rate(p0), math.exp(0.5) * 0.01 / 0.99, rtol=1e-12)

    def test_scenario_id(self):
        assert ScenarioSpec(0.1, 0.5, 300).scenario_id == "g0.1_s0.5_m300"

    @pytest.mark.parametrize("kw", [dict(gamma=1.0), dict(gamma=0.0), dict(m=0), dict(B=0), dict(sigma2=-1.0)])
    def test_invalid(self, kw):
        base = dict(gamma=0.5, sigma2=1.0, m=10)
        base.update(kw)
        with pytest.raises(ValueError):
            ScenarioSpec(**base)


class TestGenerator:
    def test_cure_fraction_per_group(self, big):
        s, _, lat = big
        truth = s.true_cure_rates()
        for name, level in (("p00", 0.0), ("p01", 1.0)):
            sel = lat.x == level
            assert lat.cured[sel].mean() == pytest.approx(truth[name], abs=0.01)

    def test_round_trip(self, big):
        s, _, lat = big
        v = s.truth()
        ok = ~lat.cured
        X = np.column_stack([np.ones(ok.sum()), lat.x[ok]])
        s_at_t = np.array([population_survival(t, v, x) for t, x in zip(lat.event_times[ok][:2000], X[:2000])])
        np.testing.assert_allclose(s_at_t, lat.u[ok][:2000], atol=1e-8)

    def test_cured_units_censored(self, big):
        s, data, lat = big
        assert np.all(np.isinf(lat.event_times[lat.cured]))
        assert not data.events[lat.cured].any()
        np.testing.assert_array_equal(data.times[lat.cured], lat.censor_times[lat.cured])
        p_min = min(s.true_cure_rates().values())
        assert data.n_events / data.m < 1 - p_min

    def test_observed_is_minimum(self, big):
        _, data, lat = big
        np.testing.assert_array_equal(data.times, np.minimum(lat.event_times, lat.censor_times))
        np.testing.assert_array_equal(data.events, lat.event_times < lat.censor_times)

    def test_kaplan_meier_band(self, big):
        s, data, lat = big
        v = s.truth()
        finite = lat.event_times[np.isfinite(lat.event_times)]
        t_max = np.quantile(finite, 0.99)
        for level in (0.0, 1.0):
            sel = lat.x == level
            t, km = kaplan_meier(data.times[sel], data.events[sel])
            keep = t <= t_max
            model = population_survival(t[keep], v, [1.0, level])
            assert np.max(np.abs(km[keep] - model)) < 0.02

    def test_deterministic(self):
        s = ScenarioSpec(0.9, 2.0, 50, seed=3)
        a, _ = generate_dataset(s, 4)
        b, _ = generate_dataset(s, 4)
        c, _ = generate_dataset(s, 5)
        assert a == b
        assert a != c

    @pytest.mark.parametrize("gamma,sigma2", [(0.1, 0.5), (0.5, 1.5), (0.9, 2.0)])
    def test_event_times_positive_finite(self, gamma, sigma2):
        _, lat = generate_dataset(ScenarioSpec(gamma, sigma2, 2000, seed=1), 0)
        t = lat.event_times[~lat.cured]
        assert np.all(np.isfinite(t) & (t > 0))

    def test_non_unit_shape(self):
        s = ScenarioSpec(0.5, 1.0, 3000, seed=2, alpha=0.3, lam=1.8)
        _, lat = generate_dataset(s, 0)
        ok = ~lat.cured
        v = s.truth()
        got = [population_survival(t, v, [1.0, x]) for t, x in zip(lat.event_times[ok][:300], lat.x[ok][:300])]
        np.testing.assert_allclose(got, lat.u[ok][:300], atol=1e-8)


class TestAggregate:
    def test_single_replicate(self):
        table, mean, sd = aggregate([{"pvfcr_eta": 0.7, "cpo_diff": 1.5}], {"eta": 0.5})
        row = table[0]
        assert row["AE"] == 0.7
        assert row["RMSE"] == pytest.approx(0.2)
        assert (mean, sd) == (1.5, 0.0)

    def test_bias_variance_identity(self, rng):
        est = rng.normal(0.6, 0.05, size=50)
        records = [{"pvfcr_p00": e, "cpo_diff": 0.0} for e in est]
        row = aggregate(records, {"p00": 0.5888})[0][0]
        lhs = row["RMSE"] ** 2
        rhs = est.var() + (row["AE"] - 0.5888) ** 2
        assert lhs == pytest.approx(rhs, rel=1e-10)


class TestStudy:
    def test_small_study(self):
        s = ScenarioSpec(0.1, 0.5, 60, B=2, seed=1)
        r = run_study(s, TINY)
        params = {"alpha", "lambda", "gamma", "sigma2", "eta", "beta0", "beta1", *PROFILES}
        assert {row["parameter"] for row in r.table if row["model"] == "pvfcr"} == params
        assert {row["parameter"] for row in r.table if row["model"] == "cr"} == params - {"gamma", "sigma2"}
        assert len(r.replicate_log) == 2 and not r.failures
        for row in r.table:
            assert row["RMSE"] >= 0
            est = r.estimates(row["model"], row["parameter"])
            assert row["RMSE"] ** 2 >= (row["AE"] - row["truth"]) ** 2 - 1e-15
        diffs = [rec["pvfcr_cpo"] - rec["cr_cpo"] for rec in r.replicate_log]
        assert r.cpo_diff_mean == pytest.approx(np.mean(diffs))
        assert est.shape == (2,)

    def test_reproducible_and_worker_independent(self):
        s = ScenarioSpec(0.5, 1.0, 40, B=2, seed=9)
        a = run_study(s, TINY)
        b = run_study(s, TINY, workers=2)
        assert a.table == b.table
        assert a.replicate_log == b.replicate_log

    def test_failed_replicate_recorded(self, monkeypatch):
        import pvfcure.simulation as sim

        real = sim._replicate

        def flaky(s, b, configs, prior):
            if b == 1:
                raise FloatingPointError("boom")
            return real(s, b, configs, prior)

        monkeypatch.setattr(sim, "_replicate", flaky)
        r = run_study(ScenarioSpec(0.5, 1.0, 40, B=3, seed=2), TINY)
        assert [f["replicate"] for f in r.failures] == [1]
        assert "boom" in r.failures[0]["error"]
        assert len(r.replicate_log) == 2


def test_cure_flags_unbiased_across_replicates():
    """Pooled over 40 replicates the cure fraction is within 3 binomial SE of the truth."""
    s = ScenarioSpec(0.5, 1.0, 5000, seed=11)
    truth = s.true_cure_rates()
    cured = {0.0: [], 1.0: []}
    for b in range(40):
        _, lat = generate_dataset(s, b)
        for level in cured:
            cured[level].append(lat.cured[lat.x == level])
    for level, name in ((0.0, "p00"), (1.0, "p01")):
        flags = np.concatenate(cured[level])
        se = math.sqrt(truth[name] * (1 - truth[name]) / flags.size)
        assert abs(flags.mean() - truth[name]) < 3 * se
