"""St. Venant-Kirchhoff constitutive law in two dimensions (plane strain)."""
from __future__ import annotations

import numpy as np


def lame_parameters(psi, nu):
    """Lamé constants ``(lambda_L, mu_L)`` for Young modulus ``psi`` and Poisson ratio ``nu``."""
    if not 0.0 < nu < 0.5:
        raise ValueError("Poisson ratio must lie in (0, 0.5)")
    psi = np.asarray(psi, dtype=float)
    lam = nu * psi / ((1.0 + nu) * (1.0 - 2.0 * nu))
    mu = psi / (2.0 * (1.0 + nu))
    return lam, mu


def green_lagrange(F):
    """``E = (F^T F - I) / 2`` for a stack of deformation gradients ``(..., 2, 2)``."""
    C = np.einsum("...kI,...kJ->...IJ", F, F)
    return 0.5 * (C - np.eye(F.shape[-1]))


def strain_energy(E, psi, nu):
    """Stored energy density ``lambda_L/2 tr(E)^2 + mu_L E:E``."""
    E = np.asarray(E, dtype=float)
    lam, mu = lame_parameters(psi, nu)
    tr = np.trace(E, axis1=-2, axis2=-1)
    return 0.5 * lam * tr**2 + mu * np.einsum("...IJ,...IJ->...", E, E)


def pk2_stress(E, psi, nu):
    """Second Piola-Kirchhoff stress ``S = lambda_L tr(E) I + 2 mu_L E``.

    ``E`` may be a single ``2x2`` tensor or a stack ``(..., 2, 2)``; ``psi`` must
    broadcast against the leading dimensions.
    """
    E = np.asarray(E, dtype=float)
    if psi is not None and np.any(np.asarray(psi) <= 0):
        raise ValueError("Young modulus must be positive")
    lam, mu = lame_parameters(psi, nu)
    lam = np.asarray(lam)[..., None, None]
    mu = np.asarray(mu)[..., None, None]
    tr = np.trace(E, axis1=-2, axis2=-1)[..., None, None]
    return lam * tr * np.eye(2) + 2.0 * mu * E
