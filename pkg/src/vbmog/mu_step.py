"""Update of a component mean by linearised Gauss-Newton with a hierarchical prior.

The objective for component ``j`` is

    F_mu(mu) = -<tau>/2 ||y_hat - y(mu)||^2 + log p(mu),

where ``log p(mu) = -1/2 mu^T P mu`` for the current prior precision ``P``
(``L^T <Phi> L`` for the jump prior).  Each iteration refreshes the prior
hyperparameters, solves the Gauss-Newton normal equations and backtracks on
``F_mu``.  Every trial point costs one forward call.
"""
from __future__ import annotations

import logging
import warnings

import numpy as np
import scipy.linalg as sla

from .model import SolverError

log = logging.getLogger(__name__)


def hyperprior_update(mu, prior):
    """Refresh the prior's hyperparameters at ``mu``; returns them (or ``None``)."""
    return prior.update(mu)


def mu_log_prior_grad(mu, prior):
    return prior.log_prior_grad(mu)


def mu_objective(mu, y_at_mu, y_hat, tau_mean, prior):
    r = y_hat - y_at_mu
    lp, _ = prior.log_prior_grad(mu)
    return -0.5 * tau_mean * float(r @ r) + lp


def gauss_newton_mu_step(mu, G, y_at_mu, y_hat, tau_mean, prior):
    """Solve ``(<tau> G^T G + P) dmu = <tau> G^T (y_hat - y(mu)) + grad log p(mu)``.

    If the Cholesky factorisation fails a ridge of ``1e-8 * mean(diag)`` is
    added to the diagonal and a warning is emitted.
    """
    A = tau_mean * (G.T @ G)
    P = prior.precision()
    A = A + (P.toarray() if hasattr(P, "toarray") else np.asarray(P))
    _, grad = prior.log_prior_grad(mu)
    rhs = tau_mean * (G.T @ (y_hat - y_at_mu)) + grad
    try:
        c = sla.cho_factor(A, check_finite=True)
    except np.linalg.LinAlgError:
        ridge = 1e-8 * float(np.mean(np.diag(A)))
        if not ridge > 0:
            ridge = 1e-8
        warnings.warn("Gauss-Newton system is singular; adding a ridge", RuntimeWarning,
                      stacklevel=2)
        c = sla.cho_factor(A + ridge * np.eye(A.shape[0]))
    return sla.cho_solve(c, rhs)


def optimize_mu(comp, model, y_hat, tau_mean, prior=None, max_steps=50, rtol=1e-5,
                max_halvings=10):
    """Run the damped Gauss-Newton / hyperprior EM loop for one component.

    Updates ``comp.mu``, ``comp.y`` and ``comp.G`` in place and returns a
    dict with the forward-call count, the objective history and the number
    of accepted steps.
    """
    prior = comp.prior if prior is None else prior
    calls = 0
    mu = comp.mu
    if not comp.has_cache:
        comp.y, comp.G = model.evaluate_with_jacobian(mu)
        calls += 1
    prior.update(mu)
    F = mu_objective(mu, comp.y, y_hat, tau_mean, prior)
    history = [F]
    accepted = 0
    for _ in range(max_steps):
        dmu = gauss_newton_mu_step(mu, comp.G, comp.y, y_hat, tau_mean, prior)
        t = 1.0
        converged = False
        best = None
        for _ in range(max_halvings + 1):
            trial = mu + t * dmu
            try:
                y_t, G_t = model.evaluate_with_jacobian(trial)
            except SolverError as exc:
                calls += 1
                log.debug("forward solve failed during line search: %s", exc)
                t *= 0.5
                continue
            calls += 1
            F_t = mu_objective(trial, y_t, y_hat, tau_mean, prior)
            if abs(F_t - F) <= rtol * abs(F):
                converged = True
                if F_t >= F:
                    best = (trial, y_t, G_t, F_t)
                break
            if F_t > F:
                best = (trial, y_t, G_t, F_t)
                break
            t *= 0.5
        if best is not None:
            mu, comp.y, comp.G, F = best
            accepted += 1
        history.append(F)
        if converged or best is None:
            break
        prior.update(mu)
        F = mu_objective(mu, comp.y, y_hat, tau_mean, prior)
    comp.mu = np.asarray(mu, dtype=float)
    comp.tau_at_opt = tau_mean
    comp.mu_calls += calls
    return {"calls": calls, "history": history, "accepted": accepted}
