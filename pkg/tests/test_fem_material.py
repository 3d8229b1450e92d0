import numpy as np
import pytest
from hypothesis import given, strategies as st

from vbmog.fem.material import green_lagrange, lame_parameters, pk2_stress, strain_energy


def _sym(a, b, c):
    return np.array([[a, b], [b, c]])


class TestLame:
    def test_values(self):
        lam, mu = lame_parameters(1e4, 0.3)
        np.testing.assert_allclose([lam, mu], [5769.2307692, 3846.1538462], rtol=1e-9)

    @pytest.mark.parametrize("nu", [0.0, 0.5, -0.1])
    def test_rejects_poisson_ratio(self, nu):
        with pytest.raises(ValueError):
            lame_parameters(1.0, nu)


class TestStress:
    def test_isotropic_strain(self):
        eps = 1e-3
        S = pk2_stress(eps * np.eye(2), 1e4, 0.3)
        lam, mu = lame_parameters(1e4, 0.3)
        np.testing.assert_allclose(S, (2 * lam * eps + 2 * mu * eps) * np.eye(2), rtol=1e-12)

    def test_zero_strain(self):
        np.testing.assert_array_equal(pk2_stress(np.zeros((2, 2)), 5.0, 0.3), 0.0)

    def test_rejects_non_positive_modulus(self):
        with pytest.raises(ValueError):
            pk2_stress(np.eye(2), 0.0, 0.3)

    @given(st.floats(-0.05, 0.05), st.floats(-0.05, 0.05), st.floats(-0.05, 0.05),
           st.floats(1e2, 1e5))
    def test_stress_is_energy_derivative(self, a, b, c, psi):
        E = _sym(a, b, c)
        S = pk2_stress(E, psi, 0.3)
        h = 1e-6
        fd = np.empty((2, 2))
        for I, J in [(0, 0), (1, 1), (0, 1)]:
            dE = np.zeros((2, 2))
            dE[I, J] = dE[J, I] = h
            w = (strain_energy(E + dE, psi, 0.3) - strain_energy(E - dE, psi, 0.3)) / (2 * h)
            fd[I, J] = fd[J, I] = w if I == J else 0.5 * w
        scale = max(np.abs(S).max(), psi * 1e-3)
        assert np.abs(fd - S).max() / scale < 1e-6

    def test_stack_broadcast(self):
        E = np.stack([0.01 * np.eye(2), _sym(0.0, 0.02, 0.0)])
        S = pk2_stress(E, np.array([1.0, 2.0]), 0.25)
        np.testing.assert_allclose(S[1], pk2_stress(E[1], 2.0, 0.25))


class TestGreenLagrange:
    def test_rotation_is_strain_free(self):
        t = 0.7
        R = np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])
        np.testing.assert_allclose(green_lagrange(R), 0.0, atol=1e-15)

    def test_stretch(self):
        np.testing.assert_allclose(green_lagrange(np.diag([1.1, 1.0])), np.diag([0.105, 0.0]))
