import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.linalg import subspace_angles

from conftest import random_orthonormal
from vbmog.stiefel import (append_orthogonal_column, cayley_retract_search, init_orthonormal,
                           orthogonality_error, orthonormalize, stiefel_objective_grad)


def _objective(G, lam_inv, tau):
    return lambda W: stiefel_objective_grad(W, G, lam_inv, tau)


class TestObjective:
    @given(st.integers(0, 2**31 - 1))
    def test_gradient_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        G = rng.standard_normal((7, 5))
        W = rng.standard_normal((5, 2))
        lam_inv = rng.uniform(0.1, 2.0, 2)
        _, g = stiefel_objective_grad(W, G, lam_inv, 3.0)
        h = 1e-6
        fd = np.empty_like(W)
        for idx in np.ndindex(*W.shape):
            E = np.zeros_like(W)
            E[idx] = h
            fd[idx] = (stiefel_objective_grad(W + E, G, lam_inv, 3.0)[0]
                       - stiefel_objective_grad(W - E, G, lam_inv, 3.0)[0]) / (2 * h)
        assert np.abs(fd - g).max() <= 1e-6 * max(1.0, np.abs(g).max())

    def test_zero_forward_map(self):
        v, g = stiefel_objective_grad(np.eye(3)[:, :2], np.zeros((4, 3)), np.ones(2), 5.0)
        assert v == 0.0
        np.testing.assert_array_equal(g, 0.0)

    def test_circle_example(self):
        G = np.diag([1.0, 2.0])               # G^T G = diag(1, 4)
        tau, lam = 3.0, 2.0
        v, _ = stiefel_objective_grad(np.array([[1.0], [0.0]]), G, np.array([1 / lam]), tau)
        assert v == pytest.approx(-tau / (2 * lam))
        t = np.linspace(0, np.pi, 721)
        vals = [stiefel_objective_grad(np.array([[np.cos(a)], [np.sin(a)]]), G,
                                       np.array([1 / lam]), tau)[0] for a in t]
        assert abs(np.cos(t[int(np.argmax(vals))])) == pytest.approx(1.0)


class TestSearch:
    def test_zero_gradient_leaves_w(self, rng):
        W = random_orthonormal(rng, 5, 2)
        W2, info = cayley_retract_search(W, _objective(np.zeros((3, 5)), np.ones(2), 1.0))
        np.testing.assert_array_equal(W2, W)
        assert info["iterations"] == 0

    @given(st.integers(0, 2**31 - 1))
    def test_feasible_and_monotone(self, seed):
        rng = np.random.default_rng(seed)
        G = rng.standard_normal((10, 8))
        W = random_orthonormal(rng, 8, 3)
        W2, info = cayley_retract_search(W, _objective(G, rng.uniform(0.2, 1.0, 3), 2.0))
        assert orthogonality_error(W2) < 1e-10
        assert np.all(np.diff(info["values"]) >= 0.0)

    @pytest.mark.parametrize("d_psi,d_theta", [(5, 1), (5, 2), (30, 4), (50, 3)])
    def test_converges_to_smallest_eigenvectors(self, d_psi, d_theta, rng):
        Q = random_orthonormal(rng, d_psi, d_psi)
        ev = np.concatenate([np.linspace(0.1, 0.5, d_theta), np.linspace(2.0, 5.0, d_psi - d_theta)])
        G = np.diag(np.sqrt(ev)) @ Q.T
        lam_inv = np.linspace(1.0, 0.5, d_theta)
        W = random_orthonormal(rng, d_psi, d_theta)
        obj = _objective(G, lam_inv, 1.0)
        for _ in range(40):
            W, info = cayley_retract_search(W, obj, max_iters=30)
            if info["iterations"] == 0:
                break
        assert np.max(subspace_angles(W, Q[:, :d_theta])) < 1e-4
        assert orthogonality_error(W) < 1e-10


class TestConstruction:
    def test_init_is_seeded_and_orthonormal(self):
        a, b = init_orthonormal(9, 3, 7), init_orthonormal(9, 3, 7)
        np.testing.assert_array_equal(a, b)
        assert orthogonality_error(a) < 1e-12

    def test_square(self):
        assert orthogonality_error(init_orthonormal(4, 4, 1)) < 1e-12

    def test_bad_sizes(self):
        with pytest.raises(ValueError):
            init_orthonormal(3, 4, 0)

    def test_append_column(self, rng):
        W = random_orthonormal(rng, 6, 2)
        W3 = append_orthogonal_column(W, rng)
        np.testing.assert_array_equal(W3[:, :2], W)
        assert orthogonality_error(W3) < 1e-12
        with pytest.raises(ValueError):
            append_orthogonal_column(random_orthonormal(rng, 3, 3), rng)

    def test_shared_direction_gives_equal_columns(self, rng):
        W = random_orthonormal(rng, 6, 2)
        v = rng.standard_normal(6)
        np.testing.assert_array_equal(append_orthogonal_column(W, rng, v),
                                      append_orthogonal_column(W.copy(), rng, v))

    def test_orthonormalize_sign_convention(self, rng):
        A = rng.standard_normal((5, 3))
        Q = orthonormalize(A)
        assert np.all(np.diag(Q.T @ A) > 0)
