"""Algebra for covariances of the form ``D = W diag(1/lam) W^T + I / lam_eta``.

``W`` has orthonormal columns.  When the isotropic term is absent
(``lam_eta=None``) the basis must be square so that ``D`` is invertible.
All operations cost ``O(d_psi * d_theta**2)`` or less; nothing of size
``d_psi x d_psi`` is formed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LowRankCovariance:
    W: np.ndarray
    lam: np.ndarray
    lam_eta: float | None = None

    def __post_init__(self):
        W = np.asarray(self.W, dtype=float)
        if W.ndim == 1:
            W = W[:, None]
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "lam", np.asarray(self.lam, dtype=float).reshape(-1))
        if W.shape[1] != self.lam.size:
            raise ValueError("W and lam disagree on d_theta")
        if np.any(self.lam <= 0):
            raise ValueError("precisions must be positive")
        if self.lam_eta is None:
            if W.shape[0] != W.shape[1]:
                raise ValueError("without an isotropic term the basis must be square")
        elif not self.lam_eta > 0:
            raise ValueError("lam_eta must be positive")

    @property
    def d_psi(self):
        return self.W.shape[0]

    # D = beta I + W J W^T
    def _cov_terms(self):
        beta = 0.0 if self.lam_eta is None else 1.0 / self.lam_eta
        return beta, 1.0 / self.lam

    # D^{-1} = alpha I + W K W^T
    def _prec_terms(self):
        if self.lam_eta is None:
            return 0.0, self.lam.copy()
        le = self.lam_eta
        return le, -le**2 / (self.lam + le)

    def logdet(self):
        """``log |D|``."""
        if self.lam_eta is None:
            return float(-np.sum(np.log(self.lam)))
        le = self.lam_eta
        return float(np.sum(np.log(self.lam + le)) - np.sum(np.log(self.lam))
                     - self.d_psi * np.log(le))

    def matvec(self, v):
        beta, J = self._cov_terms()
        return beta * v + self.W @ (J[:, None] * (self.W.T @ v)) if np.ndim(v) == 2 else \
            beta * v + self.W @ (J * (self.W.T @ v))

    def solve(self, v):
        """``D^{-1} v`` for a vector or a matrix of column vectors."""
        alpha, K = self._prec_terms()
        Wv = self.W.T @ v
        if np.ndim(v) == 2:
            return alpha * v + self.W @ (K[:, None] * Wv)
        return alpha * v + self.W @ (K * Wv)

    def diag(self):
        beta, J = self._cov_terms()
        return beta + (self.W**2) @ J

    def trace(self):
        beta, J = self._cov_terms()
        return beta * self.d_psi + float(np.sum(J))

    def dense(self):
        beta, J = self._cov_terms()
        return beta * np.eye(self.d_psi) + (self.W * J) @ self.W.T

    def sample(self, rng, n):
        """``n`` zero-mean draws, shape ``(n, d_psi)``."""
        beta, J = self._cov_terms()
        z = rng.standard_normal((n, self.lam.size)) * np.sqrt(J)
        out = z @ self.W.T
        if beta > 0:
            out += np.sqrt(beta) * rng.standard_normal((n, self.d_psi))
        return out


def lowrank_inverse_det(W, lam, lam_eta):
    """Return ``(apply_inverse, log_det)`` for ``D = W diag(1/lam) W^T + I/lam_eta``."""
    cov = LowRankCovariance(W, lam, lam_eta)
    return cov.solve, cov.logdet()


def trace_inv_product(b: LowRankCovariance, a: LowRankCovariance):
    """``tr(D_b^{-1} D_a)`` without forming either matrix."""
    alpha, K = b._prec_terms()
    beta, J = a._cov_terms()
    M = b.W.T @ a.W                                   # (t_b, t_a)
    d = a.d_psi
    return (alpha * beta * d + alpha * float(np.sum(J)) + beta * float(np.sum(K))
            + float(np.sum(K[:, None] * M**2 * J[None, :])))


def gaussian_kl(mu_a, cov_a: LowRankCovariance, mu_b, cov_b: LowRankCovariance):
    """``KL(N(mu_a, D_a) || N(mu_b, D_b))``."""
    diff = np.asarray(mu_b, dtype=float) - np.asarray(mu_a, dtype=float)
    quad = float(diff @ cov_b.solve(diff))
    d = cov_a.d_psi
    kl = 0.5 * (trace_inv_product(cov_b, cov_a) + quad - d + cov_b.logdet() - cov_a.logdet())
    return max(kl, 0.0)
