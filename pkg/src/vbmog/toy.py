"""One-dimensional cubic forward model with a three-mode posterior.

``y(psi) = psi**3 + psi**2 - psi``.  For an observation around 0.45 the
equation ``y(psi) = y_hat`` has three real roots, so the posterior is
trimodal.  :func:`toy_posterior_grid` evaluates the exact posterior (noise
precision integrated out analytically) by brute-force quadrature and serves
as the reference for every toy-model test.
"""
from __future__ import annotations

import numpy as np
from scipy.integrate import trapezoid
from scipy.special import gammaln

from .model import ForwardModel


def toy_evaluate(psi):
    psi = np.asarray(psi, dtype=float)
    return psi**3 + psi**2 - psi


def toy_gradient(psi):
    psi = np.asarray(psi, dtype=float)
    return 3.0 * psi**2 + 2.0 * psi - 1.0


class ToyModel(ForwardModel):
    def __init__(self):
        super().__init__(d_psi=1, d_y=1)

    def _evaluate(self, psi):
        return toy_evaluate(psi)

    def _evaluate_with_jacobian(self, psi):
        return toy_evaluate(psi), toy_gradient(psi).reshape(1, 1)


def log_marginal_tau_likelihood(misfit_sq, d_y, a0, b0):
    """log of ``int tau^(d_y/2) exp(-tau*misfit_sq/2) Gamma(tau; a0, b0) dtau``.

    Constant terms that do not depend on the misfit are kept, so values are
    comparable across calls with identical ``(d_y, a0, b0)``.
    """
    a = a0 + 0.5 * d_y
    return gammaln(a) - a * np.log(b0 + 0.5 * np.asarray(misfit_sq, dtype=float))


def toy_log_posterior(psi, y_hat, prior_precision, a0, b0, prior_mean=0.0):
    """Unnormalised log posterior of the toy model with tau marginalised."""
    psi = np.asarray(psi, dtype=float)
    misfit = (y_hat - toy_evaluate(psi)) ** 2
    return (log_marginal_tau_likelihood(misfit, 1, a0, b0)
            - 0.5 * prior_precision * (psi - prior_mean) ** 2)


def toy_posterior_grid(y_hat, prior_precision, tau_marginal, grid, edge_tol=1e-6):
    """Exact toy posterior on a regular grid, normalised by the trapezoid rule.

    Parameters
    ----------
    y_hat : float
        Observed value.
    prior_precision : float
        Precision of the zero-mean Gaussian prior on ``psi``.
    tau_marginal : tuple of float
        ``(a0, b0)`` of the Gamma prior on the noise precision.  ``b0`` must
        be positive: with ``d_y = 1`` the Jeffreys prior gives a density
        proportional to ``1/|y_hat - y(psi)|``, which is not integrable.
    grid : tuple
        ``(lo, hi, n_points)`` with ``n_points >= 1000``.

    Returns
    -------
    psi : ndarray
    density : ndarray
        Normalised so that ``trapezoid(density, psi) == 1``.
    """
    lo, hi, n = grid
    n = int(n)
    if n < 1000:
        raise ValueError("grid needs at least 1000 points")
    a0, b0 = tau_marginal
    if not b0 > 0:
        raise ValueError("b0 must be positive for the one-dimensional toy posterior")
    psi = np.linspace(lo, hi, n)
    logp = toy_log_posterior(psi, y_hat, prior_precision, a0, b0)
    dens = np.exp(logp - logp.max())
    dens /= trapezoid(dens, psi)
    # fraction of the mass sitting in the outermost cells
    h = psi[1] - psi[0]
    if max(dens[0], dens[-1]) * h > edge_tol:
        raise ValueError("grid too narrow: posterior mass reaches the endpoints")
    return psi, dens


def toy_roots(y_hat):
    """Real roots of ``y(psi) = y_hat``, sorted descending."""
    r = np.roots([1.0, 1.0, -1.0, -float(y_hat)])
    r = r[np.abs(r.imag) < 1e-9].real
    return np.sort(r)[::-1]


def basin_masses(psi, density, y_hat):
    """Posterior mass attached to each root, split at the density minima between roots."""
    roots = toy_roots(y_hat)[::-1]
    cuts = []
    for left, right in zip(roots[:-1], roots[1:]):
        sel = (psi > left) & (psi < right)
        cuts.append(psi[sel][np.argmin(density[sel])])
    edges = np.concatenate([[psi[0]], cuts, [psi[-1]]])
    masses = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        sel = (psi >= lo) & (psi <= hi)
        masses.append(trapezoid(density[sel], psi[sel]))
    return roots, np.array(masses)
