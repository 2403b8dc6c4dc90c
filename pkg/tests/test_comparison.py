import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ffpmbench.comparison import (
    BayesFactor,
    EvidenceEstimate,
    EvidenceUnderflow,
    bayes_factor,
    bayes_factor_matrix,
    classify_evidence,
    estimate_bme,
    evidence_from_loglike,
    model_weights,
    perturb_and_compare,
)
from ffpmbench.params import MarginalDistribution, ParameterSpace, make_rng


def linear_gaussian_evidence(a, y, noise_var):
    """Closed-form log evidence of y = A theta + e with theta ~ N(0, I), e ~ N(0, s2 I)."""
    cov = a @ a.T + noise_var * np.eye(len(y))
    sign, logdet = np.linalg.slogdet(cov)
    assert sign > 0
    return -0.5 * (len(y) * math.log(2 * math.pi) + logdet + y @ np.linalg.solve(cov, y))


def linear_problem(seed=0, n_out=5, dim=2):
    rng = np.random.default_rng(seed)
    a = 0.5 * rng.standard_normal((n_out, dim))
    y = a @ rng.standard_normal(dim) + rng.standard_normal(n_out)
    return a, y


class TestEstimateBme:
    def test_constant_likelihood(self):
        sp = ParameterSpace((MarginalDistribution.uniform("t", 0.0, 1.0),))
        pred = lambda th: np.zeros((th.shape[0], 2))
        est = estimate_bme(pred, sp, [0.5, -0.5], [0.25, 0.25], n=500, seed=1)
        exact = -0.5 * (2 * math.log(2 * math.pi * 0.25) + 2 * 0.25 / 0.25)
        assert est.log_bme == pytest.approx(exact, abs=1e-13)
        assert est.std_error == 0.0
        assert est.n == 500 and not est.underflow

    def test_scalar_conjugate(self):
        draws = make_rng(7, 0).standard_normal((100_000, 1))
        est = estimate_bme(lambda th: th, draws, [0.0], [1.0], n=100_000)
        assert abs(est.bme - 1 / math.sqrt(4 * math.pi)) < 3 * est.std_error * est.bme

    def test_linear_conjugate(self):
        a, y = linear_problem(3)
        draws = make_rng(11, 0).standard_normal((100_000, 2))
        est = estimate_bme(lambda th: th @ a.T, draws, y, np.ones(5), n=100_000)
        assert abs(est.log_bme - linear_gaussian_evidence(a, y, 1.0)) < 3 * est.std_error

    def test_space_prior_is_seeded(self):
        sp = ParameterSpace((MarginalDistribution.uniform("t", -1.0, 1.0),))
        pred = lambda th: th
        e1 = estimate_bme(pred, sp, [0.2], [0.1], n=1000, seed=4)
        e2 = estimate_bme(pred, sp, [0.2], [0.1], n=1000, seed=4)
        e3 = estimate_bme(pred, sp, [0.2], [0.1], n=1000, seed=5)
        assert e1 == e2 and e1.log_bme != e3.log_bme

    def test_standard_error_slope(self):
        a, y = linear_problem(1)
        ns = np.array([1_000, 10_000, 100_000])
        se = []
        for n in ns:
            draws = make_rng(2, int(n)).standard_normal((n, 2))
            se.append(estimate_bme(lambda th: th @ a.T, draws, y, np.ones(5), n=int(n)).std_error)
        slope = np.polyfit(np.log(ns), np.log(se), 1)[0]
        assert slope == pytest.approx(-0.5, abs=0.1)

    def test_too_few_draws(self):
        with pytest.raises(ValueError):
            estimate_bme(lambda th: th, np.zeros((10, 1)), [0.0], [1.0], n=50)

    def test_underflow_is_flagged_not_lost(self):
        est = evidence_from_loglike(np.array([-2000.0, -2001.0]))
        assert est.underflow and np.isfinite(est.log_bme) and est.bme == 0.0
        assert est.max_loglike == -2000.0

    def test_total_underflow_raises(self):
        with pytest.raises(EvidenceUnderflow) as info:
            evidence_from_loglike(np.full(3, -np.inf))
        assert info.value.max_loglike == -np.inf

    def test_log_space_beats_naive(self):
        ll = np.array([-1000.0, -1000.0 + math.log(3.0)])
        assert evidence_from_loglike(ll).log_bme == pytest.approx(-1000.0 + math.log(2.0), abs=1e-12)


class TestWeights:
    def test_single_model(self):
        np.testing.assert_array_equal(model_weights([-123.4]), [1.0])

    def test_equal(self):
        np.testing.assert_allclose(model_weights([-5.0, -5.0, -5.0]), np.full(3, 1 / 3), rtol=0, atol=1e-15)

    def test_thousand_to_one(self):
        w = model_weights([math.log(1000.0), 0.0])
        np.testing.assert_allclose(w, [1000 / 1001, 1 / 1001], rtol=1e-14)

    def test_priors(self):
        w = model_weights([0.0, 0.0], [0.25, 0.75])
        np.testing.assert_allclose(w, [0.25, 0.75], rtol=1e-14)

    def test_errors(self):
        with pytest.raises(ValueError):
            model_weights([0.0, 0.0], [0.5, 0.6])
        with pytest.raises(ValueError):
            model_weights([0.0, 0.0], [1.0])
        with pytest.raises(ValueError):
            model_weights([-np.inf, -np.inf])
        with pytest.raises(ValueError):
            model_weights([0.0, -np.inf], [0.0, 1.0])

    @settings(max_examples=100, deadline=None)
    @given(z=st.lists(st.floats(-5000, 5000), min_size=1, max_size=6), shift=st.floats(-1e4, 1e4))
    def test_invariants(self, z, shift):
        w = model_weights(z)
        assert abs(w.sum() - 1.0) <= 1e-12
        assert np.all((w >= 0) & (w <= 1))
        w2 = model_weights(np.asarray(z) + shift)
        np.testing.assert_allclose(w2, w, atol=1e-9)
        assert np.argmax(w2) == np.argmax(w)


class TestBayesFactor:
    def test_values(self):
        assert bayes_factor(-3.0, -3.0) == 1.0
        assert bayes_factor(-10.0, -12.0) == pytest.approx(math.exp(2.0), rel=1e-15)
        assert bayes_factor(-10.0, -12.0) == pytest.approx(7.389, abs=1e-3)

    def test_flag_propagates(self):
        flagged = EvidenceEstimate(-900.0, 0.1, 100, -890.0, underflow=True)
        ok = EvidenceEstimate(-3.0, 0.1, 100, -1.0)
        bf = bayes_factor(flagged, ok)
        assert isinstance(bf, BayesFactor) and bf.flagged and bf == 0.0
        assert not bayes_factor(ok, ok).flagged

    def test_overflow_is_infinite(self):
        assert bayes_factor(1000.0, 0.0) == math.inf

    @settings(max_examples=100, deadline=None)
    @given(z=st.lists(st.floats(-30, 30), min_size=3, max_size=5))
    def test_matrix_algebra(self, z):
        b = bayes_factor_matrix(z)
        np.testing.assert_array_equal(np.diag(b), 1.0)
        np.testing.assert_allclose(b * b.T, 1.0, rtol=1e-12)
        k = len(z)
        for i in range(k):
            for j in range(k):
                for m in range(k):
                    assert b[i, j] * b[j, m] == pytest.approx(b[i, m], rel=1e-9)
                assert b[i, j] == pytest.approx(bayes_factor(z[i], z[j]), rel=1e-12)


class TestGrades:
    @pytest.mark.parametrize("bf, label", [
        (1.0, "anecdotal"), (2.0, "anecdotal"), (3.0, "anecdotal"),
        (3.0000001, "substantial"), (5.0, "substantial"), (10.0, "substantial"),
        (10.0000001, "strong"), (100.0, "strong"), (100.0000001, "decisive"), (150.0, "decisive"),
    ])
    def test_table(self, bf, label):
        g = classify_evidence(bf)
        assert g.label == label and g.favours_first

    def test_reciprocal(self):
        g = classify_evidence(0.05)
        assert g.label == "strong" and not g.favours_first
        assert classify_evidence(0.1).label == "substantial"
        assert classify_evidence(0.01).label == "strong"

    def test_nonpositive(self):
        with pytest.raises(ValueError):
            classify_evidence(0.0)

    @settings(max_examples=60, deadline=None)
    @given(z=st.lists(st.floats(-40, 40), min_size=2, max_size=2), c=st.floats(-50, 50))
    def test_rescaling_invariance(self, z, c):
        # rescaling every likelihood by e^c adds c to every log-BME
        b1 = bayes_factor(z[0], z[1])
        b2 = bayes_factor(z[0] + c, z[1] + c)
        assert b2 == pytest.approx(b1, rel=1e-9)
        if abs(math.log10(b1) - round(math.log10(b1))) > 1e-6 and abs(b1 / 3 - 1) > 1e-6 and abs(b1 * 3 - 1) > 1e-6:
            assert classify_evidence(b1) == classify_evidence(b2)


class TestPerturbation:
    def setup_method(self):
        rng = np.random.default_rng(0)
        self.theta = rng.standard_normal((4000, 1))
        self.obs = np.array([0.3, -0.2, 0.1])
        self.var = np.full(3, 0.5)

    def test_identical_models(self):
        p = self.theta * np.ones(3)
        rep = perturb_and_compare([p, p.copy()], self.obs, [self.var, self.var], 0.1, replicates=50, seed=2)
        np.testing.assert_array_equal(rep.replicate_weights, 0.5)
        np.testing.assert_array_equal(np.median(rep.replicate_log10_bf[:, 0, 1]), 0.0)
        np.testing.assert_array_equal(rep.weight_quantiles, 0.5)

    def test_single_unperturbed(self):
        p1 = self.theta * np.ones(3)
        p2 = 2.0 + self.theta * np.ones(3)
        rep = perturb_and_compare([p1, p2], self.obs, [self.var, self.var], 0.0, replicates=1)
        assert not rep.degenerate
        np.testing.assert_allclose(rep.replicate_weights[0], rep.weights, rtol=1e-12)
        assert rep.weights[0] > rep.weights[1]
        assert rep.grades[1][0] == str(classify_evidence(rep.bayes_factors[1, 0]))

    def test_zero_noise_many_replicates_flagged(self):
        p = self.theta * np.ones(3)
        with pytest.warns(UserWarning, match="zero perturbation"):
            rep = perturb_and_compare([p, p + 1], self.obs, [self.var, self.var], 0.0, replicates=5)
        assert rep.degenerate

    def test_matches_direct_evaluation(self):
        p1 = self.theta * np.array([1.0, 0.5, -1.0])
        p2 = 0.1 + self.theta * np.ones(3)
        rep = perturb_and_compare([p1, p2], self.obs, [self.var, 2 * self.var], [0.1, 0.2, 0.3],
                                  replicates=7, seed=9)
        y = self.obs + np.array([0.1, 0.2, 0.3]) * make_rng(9, 4).standard_normal((7, 3))
        for m in range(7):
            for k, (p, v) in enumerate([(p1, self.var), (p2, 2 * self.var)]):
                r = p - y[m]
                ll = -0.5 * (3 * math.log(2 * math.pi) + np.sum(np.log(v)) + np.sum(r * r / v, axis=1))
                assert rep.replicate_log_bme[m, k] == pytest.approx(evidence_from_loglike(ll).log_bme, abs=1e-9)
        np.testing.assert_allclose(rep.replicate_weights.sum(axis=1), 1.0, atol=1e-12)

    def test_per_model_observations_share_noise(self):
        p1 = self.theta * np.array([1.0, 0.5, -1.0])
        p2 = 0.1 + self.theta * np.ones(3)
        rows = np.array([self.obs, self.obs + 0.25])
        rep = perturb_and_compare([p1, p2], rows, [self.var, self.var], 0.2, replicates=6, seed=4)
        eps = 0.2 * make_rng(4, 4).standard_normal((6, 3))
        for m in range(6):
            for k, p in enumerate([p1, p2]):
                r = p - (rows[k] + eps[m])
                ll = -0.5 * (3 * math.log(2 * math.pi) + np.sum(np.log(self.var)) + np.sum(r * r / self.var, axis=1))
                assert rep.replicate_log_bme[m, k] == pytest.approx(evidence_from_loglike(ll).log_bme, abs=1e-9)
        same = perturb_and_compare([p1, p2], np.array([self.obs, self.obs]), [self.var, self.var], 0.2,
                                   replicates=6, seed=4)
        flat = perturb_and_compare([p1, p2], self.obs, [self.var, self.var], 0.2, replicates=6, seed=4)
        np.testing.assert_array_equal(same.replicate_log_bme, flat.replicate_log_bme)
        with pytest.raises(ValueError, match="observation rows"):
            perturb_and_compare([p1, p2], rows[:1].repeat(3, axis=0), [self.var, self.var], 0.2)

    def test_csv_outputs(self, tmp_path):
        p = self.theta * np.ones(3)
        rep = perturb_and_compare([p, p + 0.5], self.obs, [self.var, self.var], 0.1, replicates=20,
                                  names=["a", "b"])
        rep.write_weights_csv(tmp_path / "w.csv")
        rep.write_bayes_factor_csv(tmp_path / "bf.csv")
        rep.write_bf_histograms(tmp_path / "h.csv", bins=5)
        assert (tmp_path / "w.csv").read_text().splitlines()[0] == "model,log_bme,log_bme_se,weight,q25,median,q75"
        assert len((tmp_path / "bf.csv").read_text().splitlines()) == 5
        assert len((tmp_path / "h.csv").read_text().splitlines()) == 1 + 2 * 5
        d = rep.to_dict()
        assert d["names"] == ["a", "b"] and d["replicates"] == 20

    def test_layout_mismatch(self):
        with pytest.raises(ValueError):
            perturb_and_compare([np.zeros((10, 2))], self.obs, [self.var], 0.1)
        with pytest.raises(ValueError):
            perturb_and_compare([np.zeros((10, 3))], self.obs, [np.zeros(3)], 0.1)
