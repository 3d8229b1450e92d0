"""Forward-model contract shared by every inverse problem.

A forward model maps a parameter vector ``psi`` (length ``d_psi``) to a
prediction ``y(psi)`` (length ``d_y``).  Every evaluation is counted, since
forward solves are the cost metric of the whole inference scheme.
"""
from __future__ import annotations

import abc
import threading
from dataclasses import dataclass, field

import numpy as np


class SolverError(RuntimeError):
    """Raised when the underlying forward solver fails to converge.

    ``diagnostics`` carries whatever the solver recorded (iteration count,
    residual history, load factor, ...).
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


@dataclass
class Observation:
    """Observed data vector, plus the true noise precision for synthetic runs."""

    values: np.ndarray
    true_noise_precision: float | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.atleast_1d(np.asarray(self.values, dtype=float))
        if not np.all(np.isfinite(self.values)):
            raise ValueError("observation contains non-finite entries")
        if self.true_noise_precision is not None and not self.true_noise_precision > 0:
            raise ValueError("true_noise_precision must be positive")

    @property
    def d_y(self):
        return self.values.size


class ForwardModel(abc.ABC):
    """Base class for forward models.

    Subclasses implement :meth:`_evaluate` and :meth:`_evaluate_with_jacobian`;
    the public wrappers validate input and maintain ``call_count``.  The
    counter is protected by a lock so concurrent evaluations at distinct
    parameters are tallied exactly.
    """

    def __init__(self, d_psi, d_y):
        if d_psi < 1 or d_y < 1:
            raise ValueError("d_psi and d_y must be >= 1")
        self.d_psi = int(d_psi)
        self.d_y = int(d_y)
        self._calls = 0
        self._lock = threading.Lock()

    @property
    def call_count(self):
        return self._calls

    def reset_call_count(self):
        with self._lock:
            self._calls = 0

    def _tick(self):
        with self._lock:
            self._calls += 1

    def _check(self, psi):
        psi = np.atleast_1d(np.asarray(psi, dtype=float))
        if psi.shape != (self.d_psi,):
            raise ValueError(f"psi must have shape ({self.d_psi},), got {psi.shape}")
        if not np.all(np.isfinite(psi)):
            raise ValueError("psi contains non-finite entries")
        return psi

    def evaluate_with_jacobian(self, psi):
        """Return ``(y(psi), dy/dpsi)``; counts as one forward call."""
        psi = self._check(psi)
        self._tick()
        y, jac = self._evaluate_with_jacobian(psi)
        return np.asarray(y, dtype=float), np.asarray(jac, dtype=float)

    def evaluate(self, psi):
        """Return ``y(psi)`` only; counts as one forward call."""
        psi = self._check(psi)
        self._tick()
        return np.asarray(self._evaluate(psi), dtype=float)

    @abc.abstractmethod
    def _evaluate(self, psi):
        ...

    @abc.abstractmethod
    def _evaluate_with_jacobian(self, psi):
        ...
