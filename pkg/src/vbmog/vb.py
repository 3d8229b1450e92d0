"""Closed-form variational updates for a mixture of low-rank Gaussians.

Each component ``s`` represents the unknowns as ``Psi = mu_s + W_s Theta + eta``
with ``q(Theta | s) = N(0, diag(lam_s)^{-1})`` and ``q(eta | s) = N(0, I / lam_eta_s)``.
The forward model is linearised at ``mu_s`` with Jacobian ``G_s``.  The noise
precision has a Gamma posterior shared by all components.

Models with a single unknown can drop ``eta`` altogether (``use_eta=False``);
then the basis is square and carries the whole covariance.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import digamma, gammaln, logsumexp

from .lowrank import LowRankCovariance


class DegeneratePrecisionError(ArithmeticError):
    """The Gamma rate of the noise posterior collapsed to zero."""


@dataclass
class MixtureComponent:
    mu: np.ndarray
    W: np.ndarray
    lam: np.ndarray
    lam0: np.ndarray
    lam_eta: float | None = None
    lam0_eta: float | None = None
    use_eta: bool = True
    y: np.ndarray | None = None
    log_weight: float = 0.0
    weight: float = 1.0
    prior: object = None
    tau_at_opt: float | None = None
    ident: int = 0
    mu_calls: int = 0
    _G: np.ndarray | None = field(default=None, init=False, repr=False)
    _gram: np.ndarray | None = field(default=None, init=False, repr=False)
    _g_frob2: float | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float).reshape(-1)
        self.W = np.asarray(self.W, dtype=float).reshape(self.mu.size, -1)
        self.lam = np.asarray(self.lam, dtype=float).reshape(-1)
        self.lam0 = np.asarray(self.lam0, dtype=float).reshape(-1)
        if self.use_eta:
            if self.lam0_eta is None:
                self.lam0_eta = float(np.max(self.lam0))
            if self.lam_eta is None:
                self.lam_eta = self.lam0_eta

    @property
    def G(self):
        return self._G

    @G.setter
    def G(self, value):
        self._G = None if value is None else np.asarray(value, dtype=float)
        self._gram = None
        self._g_frob2 = None

    def gram(self):
        """``G^T G``, cached until ``G`` is replaced."""
        if self._gram is None:
            self._gram = self._G.T @ self._G
        return self._gram

    def g_frob2(self):
        """``tr(G^T G)``."""
        if self._g_frob2 is None:
            self._g_frob2 = float(np.sum(self._G**2))
        return self._g_frob2

    def gw_sq(self):
        """``||G w_i||^2`` for every column of ``W``."""
        return np.sum(self.W * (self.gram() @ self.W), axis=0)

    @property
    def d_psi(self):
        return self.mu.size

    @property
    def d_theta(self):
        return self.W.shape[1]

    @property
    def has_cache(self):
        return self.y is not None and self.G is not None

    def invalidate(self):
        self.y = None
        self.G = None
        self.tau_at_opt = None

    def covariance(self):
        return LowRankCovariance(self.W, self.lam, self.lam_eta if self.use_eta else None)

    def misfit(self, y_hat):
        r = y_hat - self.y
        return float(r @ r)


@dataclass
class NoisePosterior:
    """Gamma(a, b) posterior of the observation-noise precision."""

    a0: float
    b0: float
    d_y: int
    b: float = 1.0

    def __post_init__(self):
        if self.a0 < 0 or self.b0 < 0:
            raise ValueError("Gamma prior parameters must be non-negative")

    @property
    def a(self):
        return self.a0 + 0.5 * self.d_y

    @property
    def mean(self):
        return self.a / self.b

    @property
    def mean_log(self):
        return float(digamma(self.a) - np.log(self.b))

    @classmethod
    def from_residual(cls, a0, b0, d_y, misfit_sq):
        """Start with ``<tau> = (a0 + d_y/2) / (b0 + misfit_sq/2)``."""
        b = b0 + 0.5 * misfit_sq
        if not b > 0:
            raise DegeneratePrecisionError("zero initial residual and b0 = 0")
        return cls(a0, b0, d_y, b)


def update_theta_precisions(comp, tau_mean):
    """``lam_i = lam0_i + <tau> ||G w_i||^2``."""
    comp.lam = comp.lam0 + tau_mean * comp.gw_sq()
    return comp.lam


def update_eta_precision(comp, tau_mean):
    """``lam_eta = lam0_eta + <tau> tr(G^T G) / d_psi``."""
    if not comp.use_eta:
        return None
    comp.lam_eta = comp.lam0_eta + tau_mean * comp.g_frob2() / comp.d_psi
    return comp.lam_eta


def expected_misfit(comp, y_hat):
    """``||y_hat - y(mu)||^2 + W^T G^T G W : Lam^{-1} + tr(G^T G) / lam_eta``."""
    val = comp.misfit(y_hat) + float(np.sum(comp.gw_sq() / comp.lam))
    if comp.use_eta:
        val += comp.g_frob2() / comp.lam_eta
    return val


def update_tau(components, y_hat, noise: NoisePosterior):
    """Gamma update of the noise precision given current component posteriors."""
    b = noise.b0 + 0.5 * sum(c.weight * expected_misfit(c, y_hat) for c in components)
    if not b > 0:
        raise DegeneratePrecisionError("noise posterior rate is zero")
    noise.b = b
    return noise


def component_log_weight(comp, tau_mean, y_hat):
    c = 0.5 * float(np.sum(np.log(comp.lam0) - np.log(comp.lam)))
    if comp.use_eta:
        c += 0.5 * comp.d_psi * float(np.log(comp.lam0_eta / comp.lam_eta))
    return c - 0.5 * tau_mean * comp.misfit(y_hat)


def update_component_weights(components, tau_mean, y_hat):
    """Softmax of the per-component log weights; returns ``q(s)``."""
    c = np.array([component_log_weight(comp, tau_mean, y_hat) for comp in components])
    q = np.exp(c - logsumexp(c))
    q /= q.sum()
    for comp, cs, qs in zip(components, c, q):
        comp.log_weight = float(cs)
        comp.weight = float(qs)
    return q


def bound_contributions(components, noise, y_hat):
    """Per-component summands of the compact bound, each weighted by ``q(s)``."""
    tau = noise.mean
    out = []
    for comp in components:
        q = comp.weight
        term = component_log_weight(comp, tau, y_hat) - (np.log(q) if q > 0 else 0.0)
        out.append(q * term)
    return np.array(out)


def lower_bound(components, noise, y_hat, mu_log_prior_values=None):
    """Compact bound, valid when ``Lam`` and ``lam_eta`` are optimal for the current ``<tau>``.

    ``sum_s q(s)[-<tau>/2 r_s^2 + 1/2 log|Lam0|/|Lam| + d/2 log(lam0_eta/lam_eta)
    - log q(s)] + a log<tau> - b0 <tau>``, plus ``sum_j log p(mu_j)`` when
    ``mu_log_prior_values`` is given.
    """
    tau = noise.mean
    F = float(np.sum(bound_contributions(components, noise, y_hat)))
    F += noise.a * np.log(tau) - noise.b0 * tau
    if mu_log_prior_values is not None:
        F += float(np.sum(mu_log_prior_values))
    return F


def elaborated_bound(components, noise, y_hat):
    """Lower bound evaluated term by term for arbitrary (non-optimal) ``q``.

    Improper Gamma priors (``a0 = 0`` or ``b0 = 0``) contribute without their
    normalising constant.
    """
    tau = noise.mean
    elog = noise.mean_log
    S = len(components)
    F = 0.5 * noise.d_y * elog
    for c in components:
        q = c.weight
        if q <= 0:
            continue
        kl_theta = 0.5 * np.sum(np.log(c.lam0 / c.lam) - c.lam0 / c.lam + 1.0)
        val = -0.5 * tau * expected_misfit(c, y_hat) + kl_theta
        if c.use_eta:
            rho = c.lam0_eta / c.lam_eta
            val += 0.5 * c.d_psi * (np.log(rho) - rho + 1.0)
        val += -np.log(S) - np.log(q)
        F += q * val
    a, b = noise.a, noise.b
    F += (noise.a0 - 1.0) * elog - noise.b0 * tau
    if noise.a0 > 0 and noise.b0 > 0:
        F += noise.a0 * np.log(noise.b0) - gammaln(noise.a0)
    F += a - np.log(b) + gammaln(a) + (1.0 - a) * digamma(a)
    return float(F)


def bound_offset(noise, S):
    """``elaborated - compact`` once ``Lam`` and ``lam_eta`` match ``<tau>``."""
    a = noise.a
    off = -a * np.log(a) + gammaln(a) + a - np.log(S)
    if noise.a0 > 0 and noise.b0 > 0:
        off += noise.a0 * np.log(noise.b0) - gammaln(noise.a0)
    return float(off)


def next_prior_precision(lam0_first, lam_prev, lam0_prev):
    """Next rung: ``max(lam0_1, lam_{i-1} - lam0_{i-1})``."""
    return max(float(lam0_first), float(lam_prev) - float(lam0_prev))


def prior_precision_ladder(lam0_first, posterior_precisions):
    """Prior precisions for coordinates ``1 .. k+1`` given posteriors ``lam_1 .. lam_k``.

    Rung ``i`` uses the posterior and prior precision of rung ``i-1``.  The
    residual prior precision is the largest rung, ``max(ladder)``.
    """
    ladder = [float(lam0_first)]
    for lam in np.asarray(posterior_precisions, dtype=float).reshape(-1):
        ladder.append(next_prior_precision(lam0_first, lam, ladder[-1]))
    return np.array(ladder)


class InformationGain(NamedTuple):
    value: float
    informative: bool


def coordinate_kl(lam0, lam):
    """KL between zero-mean 1-D Gaussians with precisions ``lam`` (posterior) and ``lam0`` (prior)."""
    rho = np.asarray(lam, dtype=float) / np.asarray(lam0, dtype=float)
    return 0.5 * (-np.log(rho) + rho - 1.0)


def information_gain(prior_precisions, posterior_precisions, d_theta):
    """Share of the total KL contributed by coordinate ``d_theta``.

    Returns ``InformationGain(0.0, False)`` when no coordinate carries any
    information.
    """
    d = int(d_theta)
    if d < 1:
        raise ValueError("d_theta must be >= 1")
    kl = coordinate_kl(np.asarray(prior_precisions)[:d], np.asarray(posterior_precisions)[:d])
    total = float(np.sum(kl))
    if total <= 0.0:
        return InformationGain(0.0, False)
    return InformationGain(float(kl[d - 1]) / total, True)


def e_step_components(components, tau_mean, y_hat):
    """Update ``Lam``, ``lam_eta`` of every component, then the weights."""
    for comp in components:
        update_theta_precisions(comp, tau_mean)
        update_eta_precision(comp, tau_mean)
    return update_component_weights(components, tau_mean, y_hat)


@dataclass
class SweepTrace:
    bounds: list = field(default_factory=list)
    compact: list = field(default_factory=list)
