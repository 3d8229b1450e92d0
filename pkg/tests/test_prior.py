import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from vbmog.prior import GaussianMuPrior, JumpPrior


def _pair_prior(**kw):
    return JumpPrior(sp.csr_matrix(np.array([[1.0, -1.0]])), **kw)


class TestJumpPrior:
    def test_update_arithmetic(self):
        p = _pair_prior()
        a, b = p.update(np.array([2.0, 0.0]))
        np.testing.assert_allclose([a[0], b[0], p.phi_mean[0]], [0.5, 2.0, 0.25])

    def test_zero_jump_hits_the_floor(self):
        p = _pair_prior(b_floor=1e-12)
        p.update(np.array([1.0, 1.0]))
        np.testing.assert_allclose(p.phi_mean, 0.5 / 1e-12)

    def test_constant_field(self):
        p = JumpPrior.for_grid(3, 3)
        p.update(np.full(9, 4.2))
        np.testing.assert_allclose(p.phi_mean, 0.5 / p.b_floor)
        v, g = p.log_prior_grad(np.full(9, 4.2))
        assert v == 0.0
        np.testing.assert_array_equal(g, 0.0)

    def test_single_pair_value_and_gradient(self):
        p = _pair_prior()
        p.update(np.array([np.sqrt(1.0), 0.0]))    # jump 1 -> <phi> = 0.5 / 0.5 = 1
        v, g = p.log_prior_grad(np.array([1.0, 0.0]))
        assert v == pytest.approx(-0.5)
        np.testing.assert_allclose(g, [-1.0, 1.0])

    @given(st.integers(0, 2**31 - 1))
    def test_gradient_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        p = JumpPrior.for_grid(3, 3, a_phi=1.0, b_phi=0.3)
        p.update(rng.standard_normal(9))
        mu = rng.standard_normal(9)
        _, g = p.log_prior_grad(mu)
        h = 1e-3                       # quadratic in mu: central differences are exact up to roundoff
        fd = np.array([(p.log_prior_grad(mu + h * e)[0] - p.log_prior_grad(mu - h * e)[0]) / (2 * h)
                       for e in np.eye(9)])
        np.testing.assert_allclose(fd, g, rtol=1e-8, atol=1e-9)

    def test_precision_matches_value(self, rng):
        p = JumpPrior.for_grid(4, 3)
        p.update(rng.standard_normal(12))
        mu = rng.standard_normal(12)
        v, _ = p.log_prior_grad(mu)
        assert v == pytest.approx(-0.5 * mu @ (p.precision() @ mu))

    def test_rejects_bad_incidence(self):
        with pytest.raises(ValueError):
            JumpPrior(sp.csr_matrix(np.array([[1.0, 1.0]])))

    def test_copy_is_independent(self):
        p = _pair_prior()
        q = p.copy()
        q.update(np.array([3.0, 0.0]))
        assert p.b_post[0] != q.b_post[0]


class TestGaussianPrior:
    def test_value_and_gradient(self):
        p = GaussianMuPrior(2, precision=4.0, mean=1.0)
        v, g = p.log_prior_grad(np.array([2.0, 1.0]))
        assert v == pytest.approx(-2.0)
        np.testing.assert_allclose(g, [-4.0, 0.0])
        assert p.update(np.zeros(2)) is None
        np.testing.assert_allclose(p.precision().toarray(), 4.0 * np.eye(2))
