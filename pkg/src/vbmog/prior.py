"""Priors on component means.

:class:`JumpPrior` is the hierarchical smoothness prior used for material
fields: every pair of neighbouring elements ``(k, l)`` gets a zero-mean
Gaussian prior on the jump ``mu_k - mu_l`` with its own precision
``phi_m ~ Gamma(a_phi, b_phi)``.  An EM treatment gives closed-form Gamma
posteriors for the ``phi_m`` and a quadratic log prior in ``mu``.
:class:`GaussianMuPrior` is an isotropic Gaussian used for small models.
"""
from __future__ import annotations

import copy

import numpy as np
import scipy.sparse as sp

from .fem.mesh import incidence_matrix


class JumpPrior:
    """Automatic-relevance-determination prior on element-to-element jumps.

    Parameters
    ----------
    L : sparse matrix
        ``d_L x d_psi`` incidence matrix, one ``+1`` and one ``-1`` per row.
    a_phi, b_phi : float
        Gamma hyperprior on every jump precision; ``(0, 0)`` is the
        scale-free choice.
    b_floor : float
        Lower bound on the posterior rate, which keeps ``<phi>`` finite when
        a jump is exactly zero.
    """

    def __init__(self, L, a_phi=0.0, b_phi=0.0, b_floor=1e-12):
        L = sp.csr_matrix(L, dtype=float)
        L.eliminate_zeros()
        row_sums = np.asarray(L.sum(axis=1)).ravel()
        if (np.any(np.diff(L.indptr) != 2) or np.any(np.abs(L.data) != 1.0)
                or np.any(row_sums != 0.0)):
            raise ValueError("every incidence row needs exactly one +1 and one -1")
        self.L = L
        self.a_phi = float(a_phi)
        self.b_phi = float(b_phi)
        self.b_floor = float(b_floor)
        m = L.shape[0]
        self.a_post = np.full(m, self.a_phi + 0.5)
        self.b_post = np.full(m, max(self.b_phi, self.b_floor))

    @classmethod
    def for_grid(cls, nx, ny, **kw):
        return cls(incidence_matrix(nx, ny), **kw)

    @property
    def d_psi(self):
        return self.L.shape[1]

    def copy(self):
        return copy.deepcopy(self)

    @property
    def phi_mean(self):
        return self.a_post / np.maximum(self.b_post, self.b_floor)

    def update(self, mu):
        """Gamma posteriors of the jump precisions given the current ``mu``."""
        jumps = self.L @ np.asarray(mu, dtype=float)
        self.a_post = np.full(jumps.size, self.a_phi + 0.5)
        self.b_post = np.maximum(self.b_phi + 0.5 * jumps**2, self.b_floor)
        return self.a_post, self.b_post

    def precision(self):
        """``L^T <Phi> L`` as a sparse matrix."""
        return (self.L.T @ sp.diags(self.phi_mean) @ self.L).tocsr()

    def log_prior_grad(self, mu):
        """``-1/2 mu^T L^T <Phi> L mu`` and its gradient."""
        mu = np.asarray(mu, dtype=float)
        Lmu = self.L @ mu
        phi = self.phi_mean
        return -0.5 * float(np.sum(phi * Lmu**2)), -(self.L.T @ (phi * Lmu))

    def to_dict(self):
        return {"kind": "jump", "a_phi": self.a_phi, "b_phi": self.b_phi,
                "b_floor": self.b_floor, "b_post": self.b_post.tolist()}


class GaussianMuPrior:
    """Isotropic Gaussian ``N(mean, precision^{-1} I)``; no hyperparameters to update."""

    def __init__(self, d_psi, precision=1e-10, mean=0.0):
        self._d = int(d_psi)
        self.prec = float(precision)
        self.mean = float(mean)

    @property
    def d_psi(self):
        return self._d

    def copy(self):
        return copy.deepcopy(self)

    def update(self, mu):
        return None

    def precision(self):
        return sp.identity(self._d, format="csr") * self.prec

    def log_prior_grad(self, mu):
        d = np.asarray(mu, dtype=float) - self.mean
        return -0.5 * self.prec * float(d @ d), -self.prec * d

    def to_dict(self):
        return {"kind": "gaussian", "precision": self.prec, "mean": self.mean}
