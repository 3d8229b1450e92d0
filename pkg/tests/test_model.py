import numpy as np
import pytest

from vbmog.model import ForwardModel, Observation, SolverError


class Linear(ForwardModel):
    def __init__(self, A):
        self.A = np.asarray(A, dtype=float)
        super().__init__(d_psi=self.A.shape[1], d_y=self.A.shape[0])

    def _evaluate(self, psi):
        return self.A @ psi

    def _evaluate_with_jacobian(self, psi):
        return self.A @ psi, self.A.copy()


class Failing(Linear):
    def _evaluate_with_jacobian(self, psi):
        raise SolverError("diverged", {"iterations": 25})


class TestForwardModel:
    def test_counts_every_call(self):
        m = Linear(np.eye(2))
        m.evaluate(np.zeros(2))
        m.evaluate_with_jacobian(np.ones(2))
        assert m.call_count == 2
        m.reset_call_count()
        assert m.call_count == 0

    def test_failed_call_is_counted(self):
        m = Failing(np.eye(2))
        with pytest.raises(SolverError) as info:
            m.evaluate_with_jacobian(np.zeros(2))
        assert info.value.diagnostics == {"iterations": 25}
        assert m.call_count == 1

    @pytest.mark.parametrize("bad", [np.zeros(3), np.array([np.nan, 0.0])])
    def test_rejects_wrong_shape_or_nonfinite(self, bad):
        with pytest.raises(ValueError):
            Linear(np.eye(2)).evaluate(bad)

    def test_shapes(self):
        m = Linear(np.ones((3, 2)))
        y, G = m.evaluate_with_jacobian(np.array([1.0, 2.0]))
        np.testing.assert_allclose(y, [3.0, 3.0, 3.0])
        assert G.shape == (m.d_y, m.d_psi)


class TestObservation:
    def test_d_y(self):
        assert Observation([1.0, 2.0]).d_y == 2

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            Observation([np.inf])

    def test_rejects_nonpositive_precision(self):
        with pytest.raises(ValueError):
            Observation([1.0], true_noise_precision=0.0)
