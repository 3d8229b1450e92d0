"""Importance-sampling check of a mixture posterior and a random-walk MCMC baseline.

The target is the exact posterior with the noise precision integrated out
analytically against its Gamma prior,

    log p(Theta, s | y_hat) = log Gamma(a0 + d_y/2)
        - (a0 + d_y/2) log(b0 + ||y_hat - y(mu_s + W_s Theta)||^2 / 2)
        + log N(Theta; 0, Lam0_s^{-1}) - log S + const,

and the proposal is the variational ``q(s) N(Theta; 0, Lam_s^{-1})``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import gammaln, logsumexp

from .posterior import MixturePosterior, log_mixture_density, sample_psi


class ValidationError(RuntimeError):
    """Raised when importance weights degenerate completely."""


class TargetValue(NamedTuple):
    value: float
    degenerate: bool


_SENTINEL = 1e300


def _log_gauss_diag(theta, prec):
    return 0.5 * float(np.sum(np.log(prec) - prec * theta**2 - np.log(2 * np.pi)))


def marginal_tau_loglik(misfit_sq, d_y, a0, b0):
    a = a0 + 0.5 * d_y
    rate = b0 + 0.5 * misfit_sq
    if rate <= 0:
        return TargetValue(_SENTINEL, True)
    return TargetValue(float(gammaln(a) - a * np.log(rate)), False)


def log_target_marginal_tau(theta, s, post: MixturePosterior, model, y_hat, a0, b0):
    """Unnormalised log target at ``(Theta, s)``; one forward call."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    psi = post.means[s] + post.bases[s] @ theta
    r = y_hat - model.evaluate(psi)
    lik = marginal_tau_loglik(float(r @ r), y_hat.size, a0, b0)
    val = lik.value + _log_gauss_diag(theta, post.prior_precisions[s]) - np.log(post.n_components)
    return TargetValue(val, lik.degenerate)


def ess(log_weights):
    """Normalised effective sample size ``1 / (M sum w_hat^2)`` in ``[1/M, 1]``."""
    lw = np.asarray(log_weights, dtype=float)
    if not np.any(np.isfinite(lw)):
        raise ValidationError("all importance weights are zero")
    w = np.exp(lw - logsumexp(lw))
    return float(1.0 / (lw.size * np.sum(w**2)))


def weighted_quantiles(x, w, quantiles):
    order = np.argsort(x)
    cdf = np.cumsum(w[order])
    cdf /= cdf[-1]
    idx = np.searchsorted(cdf, quantiles, side="left")
    return x[order][np.minimum(idx, x.size - 1)]


@dataclass
class ISResult:
    ess: float
    mean: np.ndarray
    variance: np.ndarray
    quantiles: dict
    weights: np.ndarray
    components: np.ndarray
    psi: np.ndarray
    component_mass: np.ndarray
    forward_calls: int
    degenerate_targets: int

    def summary(self):
        return {"M": int(self.weights.size), "ESS": self.ess,
                "forward_calls": self.forward_calls,
                "component_mass": self.component_mass.tolist(),
                "mean_min": float(self.mean.min()), "mean_max": float(self.mean.max()),
                "degenerate_targets": self.degenerate_targets}


def importance_validate(post: MixturePosterior, model, y_hat, a0, b0, M, seed,
                        quantile_indices=(), quantiles=(0.01, 0.5, 0.99)):
    """Draw ``M`` samples from the variational posterior and reweight them."""
    if M < 100:
        raise ValueError("M must be at least 100")
    y_hat = np.asarray(y_hat, dtype=float)
    rng = np.random.default_rng(seed)
    s = rng.choice(post.n_components, size=M, p=post.weights)
    calls0 = model.call_count
    logw = np.empty(M)
    psi = np.empty((M, post.d_psi))
    degenerate = 0
    for m in range(M):
        k = s[m]
        lam = post.precisions[k]
        theta = rng.standard_normal(lam.size) / np.sqrt(lam)
        tv = log_target_marginal_tau(theta, k, post, model, y_hat, a0, b0)
        degenerate += tv.degenerate
        logq = np.log(post.weights[k]) + _log_gauss_diag(theta, lam)
        logw[m] = tv.value - logq
        psi[m] = post.means[k] + post.bases[k] @ theta
    e = ess(logw)
    w = np.exp(logw - logsumexp(logw))
    mean = w @ psi
    var = w @ (psi - mean) ** 2
    qtab = {int(i): weighted_quantiles(psi[:, i], w, np.asarray(quantiles)).tolist()
            for i in quantile_indices}
    mass = np.array([w[s == k].sum() for k in range(post.n_components)])
    return ISResult(ess=e, mean=mean, variance=var, quantiles=qtab, weights=w, components=s,
                    psi=psi, component_mass=mass, forward_calls=model.call_count - calls0,
                    degenerate_targets=int(degenerate))


def psi_space_density(post: MixturePosterior, log_unnormalised, grid, M, seed):
    """Normalised target density on ``grid`` with the normaliser estimated by IS.

    The proposal is the full mixture ``q(Psi)``; ``log_unnormalised`` maps an
    array of parameter vectors to log target values.  Returns the density on
    the grid, the normaliser estimate and the ESS of the Psi-space weights.
    """
    samples, _ = sample_psi(post, M, seed)
    logp = np.asarray(log_unnormalised(samples), dtype=float)
    logw = logp - log_mixture_density(post, samples)
    log_z = float(logsumexp(logw) - np.log(M))
    grid = np.atleast_2d(np.asarray(grid, dtype=float).T).T
    dens = np.exp(np.asarray(log_unnormalised(grid)) - log_z)
    return dens, log_z, ess(logw)


def autocorrelation(x):
    """Sample autocorrelation at all lags (biased estimator, FFT based)."""
    x = np.asarray(x, dtype=float) - np.mean(x)
    n = x.size
    f = np.fft.rfft(x, 2 * n)
    acov = np.fft.irfft(f * np.conj(f))[:n] / n
    if acov[0] <= 0:
        return None
    return acov / acov[0]


class ChainESS(NamedTuple):
    value: float
    degenerate: bool
    lags_used: int


def ess_mcmc(chain):
    """``1 / (1 + 2 sum_k rho(k))`` truncated by the initial positive sequence rule.

    Autocorrelation pairs ``rho(2m) + rho(2m+1)`` are summed while positive.
    A constant chain is flagged degenerate and reported at the fully
    correlated limit ``1 / (2M - 1)``.
    """
    chain = np.asarray(chain, dtype=float).reshape(-1)
    M = chain.size
    rho = autocorrelation(chain)
    if rho is None:
        return ChainESS(1.0 / (2 * M - 1), True, M - 1)
    total = -1.0                       # the m = 0 pair holds rho(0) = 1 once too many
    m = 0
    while 2 * m + 1 < M:
        pair = rho[2 * m] + rho[2 * m + 1]
        if pair <= 0:
            break
        total += 2.0 * pair
        m += 1
    total = max(total, 1.0)
    return ChainESS(float(1.0 / total), False, 2 * m + 1)


@dataclass
class MCMCResult:
    chain: np.ndarray
    acceptance: float
    ess: ChainESS
    forward_calls: int


def rw_mcmc_baseline(log_target, x0, n_steps, proposal_std, seed, forward_calls=None):
    """Metropolis random walk with isotropic Gaussian proposals.

    ``log_target`` is called once per step (one forward solve).  Returns the
    chain, the acceptance rate and :func:`ess_mcmc` of the first coordinate.
    """
    rng = np.random.default_rng(seed)
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    lp = log_target(x)
    chain = np.empty((n_steps, x.size))
    accepted = 0
    for k in range(n_steps):
        prop = x + proposal_std * rng.standard_normal(x.size)
        lp_new = log_target(prop)
        if np.log(rng.random()) < lp_new - lp:
            x, lp = prop, lp_new
            accepted += 1
        chain[k] = x
    return MCMCResult(chain=chain, acceptance=accepted / n_steps, ess=ess_mcmc(chain[:, 0]),
                      forward_calls=n_steps + 1 if forward_calls is None else forward_calls)


def marginal_tau_log_posterior(model, y_hat, a0, b0, prior):
    """``psi -> log p(psi | y_hat)`` up to a constant, one forward call per point."""
    y_hat = np.asarray(y_hat, dtype=float)

    def f(psi):
        psi = np.atleast_1d(psi)
        r = y_hat - model.evaluate(psi)
        return marginal_tau_loglik(float(r @ r), y_hat.size, a0, b0).value + prior.log_prior_grad(psi)[0]
    return f
