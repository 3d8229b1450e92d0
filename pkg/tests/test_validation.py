import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import gammaln

from vbmog.posterior import MixturePosterior, log_mixture_density, sample_psi
from vbmog.toy import ToyModel, log_marginal_tau_likelihood
from vbmog.validation import (ValidationError, autocorrelation, ess, ess_mcmc,
                              importance_validate, log_target_marginal_tau,
                              marginal_tau_loglik, psi_space_density, rw_mcmc_baseline,
                              weighted_quantiles)


def _toy_post():
    means = np.array([[0.837], [-0.365], [-1.472]])
    return MixturePosterior(means=means, bases=[np.ones((1, 1))] * 3,
                            precisions=np.array([[741.0], [171.0], [627.0]]),
                            prior_precisions=np.ones((3, 1)), eta_precisions=[None] * 3,
                            weights=np.array([0.24, 0.5, 0.26]))


class TestESS:
    def test_equal_weights(self):
        assert ess(np.zeros(50)) == pytest.approx(1.0)

    def test_single_weight(self):
        lw = np.full(40, -np.inf)
        lw[3] = 0.0
        assert ess(lw) == pytest.approx(1 / 40)

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=200))
    def test_range(self, lw):
        e = ess(np.array(lw))
        assert 1.0 / len(lw) - 1e-12 <= e <= 1.0 + 1e-12

    def test_all_zero_weights_raise(self):
        with pytest.raises(ValidationError):
            ess(np.full(10, -np.inf))


class TestTarget:
    def test_marginal_likelihood_formula(self):
        v = marginal_tau_loglik(3.0, 5, 2.0, 1.0)
        a = 2.0 + 2.5
        assert v.value == pytest.approx(gammaln(a) - a * np.log(1.0 + 1.5))
        assert not v.degenerate

    def test_b0_doubling(self):
        a0, b0, m = 4.0, 0.5, 0.2
        diff = marginal_tau_loglik(m, 1, a0, 2 * b0).value - marginal_tau_loglik(m, 1, a0, b0).value
        a = a0 + 0.5
        assert diff == pytest.approx(-a * np.log((2 * b0 + m / 2) / (b0 + m / 2)))

    def test_zero_rate_is_flagged(self):
        v = marginal_tau_loglik(0.0, 3, 0.0, 0.0)
        assert v.degenerate and v.value == 1e300

    def test_target_ratio_against_toy_posterior(self):
        post, model = _toy_post(), ToyModel()
        y_hat = np.array([0.45])
        for s in range(3):
            t1, t2 = np.array([0.01]), np.array([-0.03])
            got = (log_target_marginal_tau(t1, s, post, model, y_hat, 48.0, 0.5).value
                   - log_target_marginal_tau(t2, s, post, model, y_hat, 48.0, 0.5).value)
            psi1, psi2 = post.means[s] + t1, post.means[s] + t2
            m1 = (0.45 - (psi1**3 + psi1**2 - psi1)) ** 2
            m2 = (0.45 - (psi2**3 + psi2**2 - psi2)) ** 2
            ref = (log_marginal_tau_likelihood(m1, 1, 48.0, 0.5)
                   - log_marginal_tau_likelihood(m2, 1, 48.0, 0.5) - 0.5 * (t1**2 - t2**2))
            assert got == pytest.approx(float(ref[0]), abs=1e-10)


class TestImportance:
    def test_toy_run(self):
        model = ToyModel()
        res = importance_validate(_toy_post(), model, np.array([0.45]), 48.0, 0.5, 2000, 1,
                                  quantile_indices=[0])
        assert res.forward_calls == 2000 == model.call_count
        assert res.weights.sum() == pytest.approx(1.0)
        assert res.component_mass.sum() == pytest.approx(1.0)
        assert res.ess > 0.5
        lo, med, hi = res.quantiles[0]
        assert lo < -1.4 and hi > 0.8

    def test_seeded(self):
        a = importance_validate(_toy_post(), ToyModel(), np.array([0.45]), 48.0, 0.5, 200, 9)
        b = importance_validate(_toy_post(), ToyModel(), np.array([0.45]), 48.0, 0.5, 200, 9)
        np.testing.assert_array_equal(a.weights, b.weights)

    def test_sample_floor(self):
        with pytest.raises(ValueError):
            importance_validate(_toy_post(), ToyModel(), np.array([0.45]), 48.0, 0.5, 50, 0)

    def test_exact_proposal(self):
        post = _toy_post()
        grid = np.linspace(-2, 1.5, 7)
        dens, log_z, e = psi_space_density(post, lambda x: log_mixture_density(post, x) + 3.0,
                                           grid, 500, 2)
        assert e == pytest.approx(1.0)
        assert log_z == pytest.approx(3.0)
        np.testing.assert_allclose(dens, np.exp(log_mixture_density(post, grid[:, None])))

    def test_weighted_quantiles(self):
        x = np.array([3.0, 1.0, 2.0, 4.0])
        w = np.array([0.1, 0.4, 0.1, 0.4])
        np.testing.assert_array_equal(weighted_quantiles(x, w, [0.3, 0.45, 0.55, 0.95]),
                                      [1.0, 2.0, 3.0, 4.0])


class TestMCMC:
    def test_ar1_ess(self):
        rng = np.random.default_rng(0)
        rho, n = 0.5, 200_000
        x = np.empty(n)
        x[0] = rng.standard_normal()
        e = rng.standard_normal(n) * np.sqrt(1 - rho**2)
        for k in range(1, n):
            x[k] = rho * x[k - 1] + e[k]
        assert ess_mcmc(x).value == pytest.approx((1 - rho) / (1 + rho), rel=0.05)

    def test_iid_chain(self, rng):
        assert ess_mcmc(rng.standard_normal(50_000)).value == pytest.approx(1.0, rel=0.05)

    def test_constant_chain(self):
        r = ess_mcmc(np.full(100, 2.0))
        assert r.degenerate and r.value == pytest.approx(1 / 199)

    def test_autocorrelation_lag_zero(self, rng):
        assert autocorrelation(rng.standard_normal(64))[0] == pytest.approx(1.0)

    def test_random_walk_on_gaussian(self):
        res = rw_mcmc_baseline(lambda x: -0.5 * float(x @ x), np.zeros(1), 20_000, 2.4, 5)
        assert 0.3 < res.acceptance < 0.6
        assert abs(res.chain.mean()) < 0.1
        assert res.forward_calls == 20_001
        again = rw_mcmc_baseline(lambda x: -0.5 * float(x @ x), np.zeros(1), 200, 2.4, 5)
        np.testing.assert_array_equal(again.chain, res.chain[:200])
