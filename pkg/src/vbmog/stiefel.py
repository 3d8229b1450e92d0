"""Curvilinear search on the Stiefel manifold with the Cayley transform.

For a smooth ``f(W)`` with Euclidean gradient ``Gf`` and ``W^T W = I``, the
skew matrix ``A = Gf W^T - W Gf^T`` defines the curve

    Y(t) = (I + t/2 A)^{-1} (I - t/2 A) W,

which stays on the manifold for every ``t`` and descends ``f`` for small
``t > 0``.  Writing ``A = U V^T`` with ``U = [Gf, W]`` and ``V = [W, -Gf]``
the inverse only involves a ``2k x 2k`` system (Sherman-Morrison-Woodbury):

    Y(t) = W - t U (I + t/2 V^T U)^{-1} V^T W.
"""
from __future__ import annotations

import numpy as np


def init_orthonormal(d_psi, d_theta, seed):
    """Orthonormal ``d_psi x d_theta`` matrix from the QR of a seeded Gaussian draw."""
    if not 1 <= d_theta <= d_psi:
        raise ValueError("need 1 <= d_theta <= d_psi")
    rng = np.random.default_rng(seed)
    return orthonormalize(rng.standard_normal((d_psi, d_theta)))


def orthonormalize(W):
    """Thin QR with the sign convention ``diag(R) > 0``."""
    Q, R = np.linalg.qr(W)
    s = np.sign(np.diag(R))
    s[s == 0] = 1.0
    return Q * s


def orthogonality_error(W):
    return float(np.max(np.abs(W.T @ W - np.eye(W.shape[1]))))


def append_orthogonal_column(W, rng, direction=None):
    """Append a unit column orthogonal to the span of ``W``.

    The column is ``direction`` (a random Gaussian draw if omitted) with its
    projection onto the span of ``W`` removed.
    """
    d_psi, k = W.shape
    if k >= d_psi:
        raise ValueError("basis is already complete")
    v = rng.standard_normal(d_psi) if direction is None else np.array(direction, dtype=float)
    for _ in range(2):
        v -= W @ (W.T @ v)
    v /= np.linalg.norm(v)
    return np.column_stack([W, v])


def stiefel_objective_grad(W, G, lam_inv, tau):
    """Value and Euclidean gradient of ``-tau/2 * tr(Lam^{-1} W^T G^T G W)``.

    The value is maximised when the columns of ``W`` span the eigenvectors of
    ``G^T G`` with the smallest eigenvalues.
    """
    lam_inv = np.asarray(lam_inv, dtype=float)
    GW = G @ W
    value = -0.5 * tau * float(np.sum(GW**2 * lam_inv))
    grad = -tau * (G.T @ (GW * lam_inv))
    return value, grad


def cayley_curve(W, U, V, t):
    k2 = U.shape[1]
    VU = V.T @ U
    VW = V.T @ W
    return W - t * (U @ np.linalg.solve(np.eye(k2) + 0.5 * t * VU, VW))


def cayley_retract_search(W, objective, max_iters=30, armijo=1e-4, shrink=0.5,
                          max_backtracks=40, gtol=1e-10, drift_tol=1e-12):
    """Maximise ``objective(W) -> (value, grad)`` along Cayley curves.

    Each iteration accepts the first step satisfying the Armijo condition
    after halving from a Barzilai-Borwein trial step, so the objective never
    decreases.  Trial points that drift from the manifold by more than
    ``drift_tol`` are re-orthonormalised before the Armijo test, and a trial
    step whose ``2k x 2k`` system is numerically singular counts as rejected.

    Returns
    -------
    W : ndarray
        Final iterate.
    info : dict
        ``values`` (objective after each accepted step), ``iterations``.
    """
    F, gF = objective(W)
    values = [F]
    t_prev = None
    W_prev = G_prev = None
    it = 0
    for it in range(1, max_iters + 1):
        Gf = -gF                                  # descent on f = -F
        U = np.hstack([Gf, W])
        V = np.hstack([W, -Gf])
        # ||A||_F^2 for A = U V^T without forming it
        a_norm2 = float(np.sum((U.T @ U) * (V.T @ V)))
        if a_norm2 <= (gtol * max(1.0, abs(F))) ** 2:
            it -= 1
            break
        slope = -0.5 * a_norm2                    # df/dt at t = 0
        if t_prev is None:
            t = 1.0 / np.sqrt(a_norm2)
        else:
            S = W - W_prev
            Yg = Gf - G_prev
            sy = abs(float(np.sum(S * Yg)))
            t = float(np.sum(S * S)) / sy if sy > 0 else t_prev
        accepted = False
        for _ in range(max_backtracks):
            try:
                Wt = cayley_curve(W, U, V, t)
            except np.linalg.LinAlgError:      # huge trial step: treat as rejected
                t *= shrink
                continue
            # the Armijo test is applied to the point that will actually be kept
            if orthogonality_error(Wt) > drift_tol:
                Wt = orthonormalize(Wt)
            Ft, gFt = objective(Wt)
            if -Ft <= -F + armijo * t * slope:
                accepted = True
                break
            t *= shrink
        if not accepted:
            it -= 1
            break
        W_prev, G_prev = W, Gf
        W, F, gF, t_prev = Wt, Ft, gFt, t
        values.append(F)
    return W, {"values": values, "iterations": it}
