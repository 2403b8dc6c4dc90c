import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from ffpmbench.error_models import ErrorBudget
from ffpmbench.inference import (
    AutocorrError,
    ChainEnsemble,
    LikelihoodSpec,
    ObservationSet,
    SamplerError,
    converged,
    discrepancy_space,
    integrated_autocorr_time,
    log_likelihood,
    posterior_predictive,
    run_aies,
    write_predictive_csv,
)
from ffpmbench.params import MarginalDistribution, ParameterSpace


def ar1(rho, n, seed):
    rng = np.random.default_rng(seed)
    e = rng.normal(size=n)
    x = np.empty(n)
    x[0] = e[0] / math.sqrt(1 - rho**2)
    for i in range(1, n):
        x[i] = rho * x[i - 1] + e[i]
    return x


def obs_set(values, kinds, groups=None):
    n = len(values)
    groups = groups or ["calibration"] * n
    return ObservationSet(tuple(f"p{i}" for i in range(n)), np.zeros((n, 2)), tuple(kinds), tuple(groups),
                          np.asarray(values, dtype=float))


class TestLogLikelihood:
    def test_zero_residual_identity(self):
        n = 7
        assert log_likelihood(np.ones(n), np.ones(n), np.ones(n)) == pytest.approx(-n / 2 * math.log(2 * math.pi))

    def test_scalar(self):
        r, s = 0.3, 2.5
        got = log_likelihood([1.0 + r], [1.0], [s])
        assert got == pytest.approx(-0.5 * (math.log(2 * math.pi) + math.log(s) + r * r / s), abs=1e-15)

    def test_dense_mvn_oracle(self):
        rng = np.random.default_rng(4)
        pred, obs = rng.normal(size=12), rng.normal(size=12)
        var = rng.uniform(0.1, 3.0, size=12)
        ref = stats.multivariate_normal(obs, np.diag(var)).logpdf(pred)
        assert log_likelihood(pred, obs, var) == pytest.approx(ref, abs=1e-10)

    def test_batched(self):
        rng = np.random.default_rng(5)
        pred = rng.normal(size=(4, 3))
        out = log_likelihood(pred, np.zeros(3), 0.5)
        assert out.shape == (4,)
        assert out[2] == pytest.approx(log_likelihood(pred[2], np.zeros(3), 0.5))

    def test_errors(self):
        with pytest.raises(ValueError):
            log_likelihood([1.0, 2.0], [1.0, 2.0], [1.0, 0.0])
        with pytest.raises(ValueError):
            log_likelihood([1.0, 2.0], [1.0], [1.0])

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 10**6), i=st.integers(0, 4), grow=st.floats(1e-3, 10))
    def test_strictly_decreasing_in_residual(self, seed, i, grow):
        rng = np.random.default_rng(seed)
        obs, pred, var = rng.normal(size=5), rng.normal(size=5), rng.uniform(0.1, 2, 5)
        r = pred - obs
        bumped = pred.copy()
        bumped[i] = obs[i] + np.sign(r[i] or 1.0) * (abs(r[i]) + grow)
        assert log_likelihood(bumped, obs, var) < log_likelihood(pred, obs, var)


class TestObservationSet:
    def test_subsets_and_round_trip(self, tmp_path):
        o = obs_set([1.0, 2.0, 3.0], ["velocity", "pressure", "velocity"],
                    ["calibration", "validation", "validation"])
        assert len(o.subset("validation")) == 2
        assert o.subset(kind="velocity").ids == ("p0", "p2")
        back = ObservationSet.from_dict(o.to_dict())
        np.testing.assert_array_equal(back.values, o.values)
        o.write_csv(tmp_path / "o.csv")
        assert (tmp_path / "o.csv").read_text().splitlines()[0] == "id,x,y,kind,group,value"

    def test_validation(self):
        with pytest.raises(ValueError):
            obs_set([1.0, np.inf], ["velocity", "velocity"])
        with pytest.raises(ValueError):
            obs_set([1.0], ["temperature"])


class TestLikelihoodSpec:
    def test_per_kind_broadcast(self):
        o = obs_set([1.0, 2.0, 3.0], ["velocity", "pressure", "velocity"])
        budget = ErrorBudget(list(o.kinds), mse=np.array([1e-3, 2e-3, 3e-3]), numerical=1e-4)
        spec = LikelihoodSpec(lambda th: np.repeat(th[:, :1], 3, axis=1), o, budget)
        cov = spec.covariance(0.5, 7.0)
        np.testing.assert_allclose(cov, [0.5 + 1.1e-3, 7.0 + 2.1e-3, 0.5 + 3.1e-3], rtol=1e-14)
        got = spec(np.array([[2.0, 0.5, 7.0]]))
        assert got[0] == pytest.approx(log_likelihood([2.0, 2.0, 2.0], o.values, cov))

    def test_zero_variance_is_minus_inf(self):
        o = obs_set([1.0], ["velocity"])
        spec = LikelihoodSpec(lambda th: th[:, :1], o)
        assert spec(np.array([[1.0, 0.0, 1.0]]))[0] == -np.inf

    def test_layout_mismatch(self):
        o = obs_set([1.0, 2.0], ["velocity", "pressure"])
        with pytest.raises(ValueError):
            LikelihoodSpec(lambda th: th, o, ErrorBudget(["velocity"]))
        spec = LikelihoodSpec(lambda th: th[:, :1], o)
        with pytest.raises(ValueError):
            spec(np.array([[1.0, 1.0, 1.0]]))


class TestAutocorrelation:
    def test_white_noise(self):
        x = np.random.default_rng(1).normal(size=(20000, 4, 1))
        assert integrated_autocorr_time(x)[0] == pytest.approx(1.0, abs=0.2)

    def test_ar1(self):
        x = ar1(0.9, 200_000, 2)
        assert integrated_autocorr_time(x)[0] == pytest.approx(19.0, rel=0.2)

    def test_constant_chain(self):
        with pytest.raises(AutocorrError):
            integrated_autocorr_time(np.full(500, 3.0))

    def test_too_short(self):
        with pytest.raises(AutocorrError):
            integrated_autocorr_time(np.arange(50.0))


class TestConverged:
    def test_examples(self):
        assert converged([10.0, 10.05], n_steps=10_000)
        assert not converged([10.0, 11.0], n_steps=10_000)
        assert not converged([10.0, 10.0], n_steps=400)
        assert not converged([10.0], n_steps=10_000)

    def test_max_over_parameters(self):
        assert not converged([[10.0, 5.0], [10.0, 5.2]], n_steps=10_000)
        assert converged([[10.0, 5.0], [10.01, 5.01]], n_steps=10_000)


class TestAIES:
    def test_gaussian_target(self):
        prior = ParameterSpace((MarginalDistribution.uniform("a", -50, 50),
                                MarginalDistribution.uniform("b", -50, 50)))
        ens = run_aies(lambda x: -0.5 * np.sum(x**2, axis=1), prior, 50, seed=3)
        assert ens.converged
        flat = ens.samples[ens.burn:].reshape(-1, 2)
        assert flat.shape[0] >= 5e4
        np.testing.assert_allclose(flat.mean(axis=0), 0.0, atol=0.05)
        np.testing.assert_allclose(np.cov(flat.T), np.eye(2), atol=0.1)
        assert 0 < ens.acceptance < 1

    def test_posterior_equals_prior(self):
        prior = ParameterSpace((MarginalDistribution.uniform("a", 0, 1),
                                MarginalDistribution.uniform("b", -2, 3)))
        ens = run_aies(lambda x: np.zeros(len(x)), prior, 20, seed=0)
        flat = ens.flat()
        n = flat.shape[0]
        crit = 1.63 / math.sqrt(n)  # asymptotic 1% critical value
        assert stats.kstest(flat[:, 0], "uniform").statistic < crit
        assert stats.kstest(flat[:, 1], "uniform", args=(-2, 5)).statistic < crit

    def test_bimodal_occupancy(self):
        prior = ParameterSpace((MarginalDistribution.uniform("a", -10, 10),))
        ll = lambda x: np.logaddexp(-0.5 * ((x[:, 0] - 1.5) / 0.5) ** 2, -0.5 * ((x[:, 0] + 1.5) / 0.5) ** 2)
        ens = run_aies(ll, prior, 50, seed=0, steps=20000)
        ind = (ens.samples[ens.burn:, :, 0] > 0).astype(float)
        tau = integrated_autocorr_time(ind)[0]
        p = ind.mean()
        se = math.sqrt(p * (1 - p) * tau / ind.size)
        assert abs(p - 0.5) < 4 * se

    def test_discrepancy_bounds_respected(self):
        o = obs_set([1e-3, 5.0], ["velocity", "pressure"])
        model = ParameterSpace((MarginalDistribution.uniform("V_top", 5e-4, 1.5e-3),))
        prior = model.extend(discrepancy_space().marginals)
        spec = LikelihoodSpec(lambda th: np.column_stack([th[:, 0], 5e3 * th[:, 0]]), o)
        ens = run_aies(spec, prior, 16, seed=1, steps=3000)
        s = ens.samples.reshape(-1, 3)
        assert prior.names == ["V_top", "sigma2_vel", "sigma2_p"]
        assert np.all((s[:, 0] >= 5e-4) & (s[:, 0] <= 1.5e-3))
        assert np.all((s[:, 1] >= 0) & (s[:, 1] <= 1e-5))
        assert np.all((s[:, 2] >= 0) & (s[:, 2] <= 1e-3))

    def test_bit_identical_reruns(self):
        prior = ParameterSpace((MarginalDistribution.uniform("a", -5, 5),
                                MarginalDistribution.lognormal("b", 0.1, 10)))
        ll = lambda x: -0.5 * (x[:, 0] ** 2 + np.log(x[:, 1]) ** 2)
        a = run_aies(ll, prior, 10, seed=9, steps=500)
        b = run_aies(ll, prior, 10, seed=9, steps=500)
        np.testing.assert_array_equal(a.samples, b.samples)
        np.testing.assert_array_equal(a.log_prob, b.log_prob)

    def test_errors(self):
        prior = ParameterSpace((MarginalDistribution.uniform("a", 0, 1),
                                MarginalDistribution.uniform("b", 0, 1)))
        with pytest.raises(ValueError):
            run_aies(lambda x: np.zeros(len(x)), prior, 2, seed=0, steps=10)
        degenerate = ParameterSpace((MarginalDistribution.data("c", [1.0, 1.0, 1.0]),))
        with pytest.raises(ValueError):
            run_aies(lambda x: np.zeros(len(x)), degenerate, 4, seed=0, steps=10)

    def test_stuck_walkers(self):
        prior = ParameterSpace((MarginalDistribution.uniform("a", 0, 1),))
        init = np.linspace(0.1, 0.9, 6)[:, None]
        ll = lambda x: np.where(np.isin(x[:, 0], init[:, 0]), 0.0, -np.inf)
        with pytest.raises(SamplerError, match="stuck"):
            run_aies(ll, prior, 6, seed=0, steps=3000, init=init, stuck_window=500)

    def test_chain_csv(self, tmp_path):
        prior = ParameterSpace((MarginalDistribution.uniform("a", -5, 5),))
        ens = run_aies(lambda x: -0.5 * x[:, 0] ** 2, prior, 4, seed=2, steps=300)
        ens.write_csv(tmp_path / "c.csv", all_steps=True)
        lines = (tmp_path / "c.csv").read_text().splitlines()
        assert lines[0] == "step,walker,a,log_posterior"
        assert len(lines) == 1 + 300 * 4
        assert set(ens.summary()) == {"a"}


class TestPosteriorPredictive:
    def test_degenerate_posterior(self):
        theta = np.tile([[0.3, 2.0]], (25, 1))
        m, s = posterior_predictive(lambda t: t * 2.0, theta)
        np.testing.assert_allclose(m, [0.6, 4.0])
        np.testing.assert_array_equal(s, 0.0)

    def test_linear_pushforward(self):
        rng = np.random.default_rng(3)
        theta = rng.normal(1.5, 0.2, size=(100_000, 1))
        m, s = posterior_predictive(lambda t: t, theta)
        assert m[0] == pytest.approx(1.5, abs=4 * 0.2 / math.sqrt(1e5))
        assert s[0] == pytest.approx(0.2, rel=0.01)

    def test_predictor_variance_added(self):
        theta = np.tile([[1.0]], (10, 1))
        m, s = posterior_predictive(lambda t: (t, np.full_like(t, 0.09)), theta)
        assert s[0] == pytest.approx(0.3)
        _, s0 = posterior_predictive(lambda t: (t, np.full_like(t, 0.09)), theta, add_predictor_variance=False)
        assert s0[0] == 0.0

    def test_empty(self):
        with pytest.raises(ValueError):
            posterior_predictive(lambda t: t, np.zeros((0, 1)))

    def test_bar_chart_layout(self, tmp_path):
        o = obs_set([1.0, 2.0], ["velocity", "pressure"], ["validation"] * 2)
        write_predictive_csv(tmp_path / "b.csv", o, {"A": (np.array([1.1, 2.1]), np.array([0.1, 0.2])),
                                                     "B": (np.array([0.9, 1.9]), np.array([0.3, 0.4]))})
        lines = (tmp_path / "b.csv").read_text().splitlines()
        assert lines[0] == "point,kind,reference,model,mean,std"
        assert len(lines) == 1 + 2 * 2
