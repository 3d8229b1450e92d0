"""The mixture posterior over the unknowns and its summaries.

``q(Psi) = sum_s q(s) N(Psi; mu_s, D_s)`` with
``D_s = W_s Lam_s^{-1} W_s^T + I / lam_eta_s``.  Covariances are kept in
factored form; only diagonals and ``d_psi x d_theta`` factors are formed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, ndtr

from .lowrank import LowRankCovariance


@dataclass
class MixturePosterior:
    means: np.ndarray          # (S, d_psi)
    bases: list                # S arrays (d_psi, d_theta)
    precisions: np.ndarray     # (S, d_theta)
    prior_precisions: np.ndarray
    eta_precisions: list       # S floats or None
    weights: np.ndarray        # (S,)

    def __post_init__(self):
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        self.bases = [np.asarray(W, dtype=float).reshape(self.means.shape[1], -1) for W in self.bases]
        self.precisions = np.atleast_2d(np.asarray(self.precisions, dtype=float))
        self.prior_precisions = np.atleast_2d(np.asarray(self.prior_precisions, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if abs(self.weights.sum() - 1.0) > 1e-10 or np.any(self.weights < 0):
            raise ValueError("weights must be non-negative and sum to one")
        if not (len(self.bases) == self.precisions.shape[0] == self.weights.size
                == self.means.shape[0] == len(self.eta_precisions)):
            raise ValueError("inconsistent number of components")

    @classmethod
    def from_components(cls, components):
        return cls(means=np.array([c.mu for c in components]),
                   bases=[c.W.copy() for c in components],
                   precisions=np.array([c.lam for c in components]),
                   prior_precisions=np.array([c.lam0 for c in components]),
                   eta_precisions=[float(c.lam_eta) if c.use_eta else None for c in components],
                   weights=np.array([c.weight for c in components]))

    @property
    def n_components(self):
        return self.weights.size

    @property
    def d_psi(self):
        return self.means.shape[1]

    def covariance(self, s):
        return LowRankCovariance(self.bases[s], self.precisions[s], self.eta_precisions[s])

    def component_variances(self):
        """Per-coordinate variances of every component, shape ``(S, d_psi)``."""
        return np.array([self.covariance(s).diag() for s in range(self.n_components)])

    def to_dict(self):
        return {"means": self.means.tolist(), "bases": [W.tolist() for W in self.bases],
                "precisions": self.precisions.tolist(),
                "prior_precisions": self.prior_precisions.tolist(),
                "eta_precisions": list(self.eta_precisions), "weights": self.weights.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(means=np.array(d["means"]), bases=[np.array(W) for W in d["bases"]],
                   precisions=np.array(d["precisions"]),
                   prior_precisions=np.array(d["prior_precisions"]),
                   eta_precisions=list(d["eta_precisions"]), weights=np.array(d["weights"]))


@dataclass
class MixtureMoments:
    """Mean, per-coordinate variance and the factors of the full covariance."""

    mean: np.ndarray
    variance: np.ndarray
    weights: np.ndarray
    means: np.ndarray
    covariances: list

    def cov_matvec(self, v):
        """Product of the full mixture covariance with ``v``."""
        out = np.zeros_like(self.mean)
        for q, mu, cov in zip(self.weights, self.means, self.covariances):
            d = mu - self.mean
            out += q * (cov.matvec(v) + d * (d @ v))
        return out

    def dense(self):
        if self.mean.size > 512:
            raise MemoryError("dense covariance refused for d_psi > 512")
        C = np.zeros((self.mean.size, self.mean.size))
        for q, mu, cov in zip(self.weights, self.means, self.covariances):
            d = mu - self.mean
            C += q * (cov.dense() + np.outer(d, d))
        return C


def mixture_moments(post: MixturePosterior):
    q = post.weights
    mean = q @ post.means
    var = q @ (post.component_variances() + post.means**2) - mean**2
    return MixtureMoments(mean=mean, variance=np.maximum(var, 0.0), weights=q,
                          means=post.means, covariances=[post.covariance(s)
                                                         for s in range(post.n_components)])


def marginal_density(post: MixturePosterior, index, values):
    """Mixture density of coordinate ``index`` at ``values``."""
    if not 0 <= index < post.d_psi:
        raise IndexError("coordinate index out of range")
    x = np.asarray(values, dtype=float)
    var = post.component_variances()[:, index]
    mu = post.means[:, index]
    z = (x[..., None] - mu) ** 2 / var
    return np.sum(post.weights * np.exp(-0.5 * z) / np.sqrt(2 * np.pi * var), axis=-1)


def log_mixture_density(post: MixturePosterior, psi):
    """Joint log density of ``q(Psi)`` at the rows of ``psi``."""
    psi = np.atleast_2d(psi)
    out = []
    for s in range(post.n_components):
        cov = post.covariance(s)
        d = psi - post.means[s]
        quad = np.sum(d * cov.solve(d.T).T, axis=1)
        out.append(np.log(post.weights[s]) - 0.5 * (quad + cov.logdet() + post.d_psi * np.log(2 * np.pi)))
    return logsumexp(np.array(out), axis=0)


def sample_psi(post: MixturePosterior, n, seed):
    """``n`` draws from the mixture: component first, then its Gaussian."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    s = rng.choice(post.n_components, size=n, p=post.weights)
    out = np.empty((n, post.d_psi))
    for k in range(post.n_components):
        idx = np.flatnonzero(s == k)
        if idx.size:
            out[idx] = post.means[k] + post.covariance(k).sample(rng, idx.size)
    return out, s


def mixture_cdf(x, weights, mu, sd):
    return float(np.sum(weights * ndtr((x - mu) / sd)))


def credible_cut(post: MixturePosterior, indices, quantiles, tol=1e-10):
    """Exact marginal quantiles by bisection on the mixture CDF.

    Returns an array of shape ``(len(indices), len(quantiles))``.
    """
    quantiles = np.asarray(quantiles, dtype=float)
    if np.any((quantiles <= 0) | (quantiles >= 1)):
        raise ValueError("quantiles must lie in (0, 1)")
    var = post.component_variances()
    out = np.empty((len(indices), quantiles.size))
    for r, i in enumerate(indices):
        mu = post.means[:, i]
        sd = np.sqrt(var[:, i])
        lo0 = float(np.min(mu - 40 * sd))
        hi0 = float(np.max(mu + 40 * sd))
        for c, p in enumerate(quantiles):
            lo, hi = lo0, hi0
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                val = mixture_cdf(mid, post.weights, mu, sd)
                if abs(val - p) <= tol:
                    break
                if val < p:
                    lo = mid
                else:
                    hi = mid
            out[r, c] = mid
    return out
