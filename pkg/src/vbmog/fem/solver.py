"""Total-Lagrangian Newton solver for bilinear quadrilaterals and its parameter Jacobian.

The material field enters element-wise through a Young modulus ``psi_e``.
Because the St. Venant-Kirchhoff stress is proportional to ``psi_e``, the
element internal force is ``psi_e * f_unit_e(u)``.  Differentiating the
discrete equilibrium ``f_int(u, psi) = f_ext`` with respect to the log-modulus
``Psi_e = log psi_e`` therefore gives ``K du/dPsi_e = -f_int_e``: the columns of
the parameter sensitivity matrix are the element force vectors themselves,
and one factorisation of the converged tangent ``K`` serves all of them.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..model import SolverError
from .material import lame_parameters
from .mesh import Mesh

_GP = 1.0 / np.sqrt(3.0)
_XI = np.array([[-_GP, -_GP], [_GP, -_GP], [_GP, _GP], [-_GP, _GP]])
_CORNERS = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])


def _reference_derivatives():
    """``dN_a/dxi_p`` at the four Gauss points, shape ``(4 gp, 4 nodes, 2)``."""
    out = np.empty((4, 4, 2))
    for g, (xi, eta) in enumerate(_XI):
        out[g, :, 0] = 0.25 * _CORNERS[:, 0] * (1.0 + eta * _CORNERS[:, 1])
        out[g, :, 1] = 0.25 * _CORNERS[:, 1] * (1.0 + xi * _CORNERS[:, 0])
    return out


@dataclass
class BoundaryConditions:
    """Clamped degrees of freedom plus a fixed external nodal force vector."""

    dirichlet_dofs: np.ndarray
    f_ext: np.ndarray

    def __post_init__(self):
        self.dirichlet_dofs = np.unique(np.asarray(self.dirichlet_dofs, dtype=int))
        self.f_ext = np.asarray(self.f_ext, dtype=float)
        if np.any(self.f_ext[self.dirichlet_dofs] != 0.0):
            raise ValueError("external loads act on clamped degrees of freedom")

    @classmethod
    def clamped_bottom_traction_top(cls, mesh: Mesh, traction=(0.0, -100.0)):
        """Bottom edge fixed, uniform traction per unit length on the top edge."""
        dofs = np.concatenate([2 * mesh.bottom_nodes, 2 * mesh.bottom_nodes + 1])
        f = np.zeros(mesh.n_dofs)
        t = np.asarray(traction, dtype=float)
        for a, b in mesh.top_edges:
            h = np.linalg.norm(mesh.coords[b] - mesh.coords[a])
            for n in (a, b):
                f[2 * n:2 * n + 2] += 0.5 * h * t
        return cls(dofs, f)

    def scaled(self, factor):
        return BoundaryConditions(self.dirichlet_dofs, factor * self.f_ext)

    def free_dofs(self, n_dofs):
        mask = np.ones(n_dofs, dtype=bool)
        mask[self.dirichlet_dofs] = False
        return np.flatnonzero(mask)


@dataclass
class FemState:
    """Converged displacement field and the factorised tangent at that state."""

    u: np.ndarray
    residual_norm: float
    iterations: int
    history: list = field(default_factory=list)
    load_steps: int = 1
    tangent_lu: object = None
    element_forces: np.ndarray | None = None
    free: np.ndarray | None = None


class Assembler:
    """Vectorised element kernels and sparse assembly on a fixed mesh."""

    def __init__(self, mesh: Mesh, nu: float):
        self.mesh = mesh
        self.nu = float(nu)
        self.lam1, self.mu1 = lame_parameters(1.0, nu)
        X = mesh.coords[mesh.elements]                       # (e, a, I)
        dndxi = _reference_derivatives()                      # (g, a, p)
        J = np.einsum("eaI,gap->egIp", X, dndxi)
        self.detJ = np.linalg.det(J)
        if np.any(self.detJ <= 0):
            raise ValueError("mesh has inverted elements")
        Jinv = np.linalg.inv(J)
        self.dNdX = np.einsum("gap,egpJ->egaJ", dndxi, Jinv)  # (e, g, a, J)
        self.wdet = self.detJ                                 # unit Gauss weights
        edofs = np.empty((mesh.n_elements, 8), dtype=int)
        edofs[:, 0::2] = 2 * mesh.elements
        edofs[:, 1::2] = 2 * mesh.elements + 1
        self.edofs = edofs
        self._rows = np.repeat(edofs, 8, axis=1).ravel()
        self._cols = np.tile(edofs, (1, 8)).ravel()

    def deformation_gradient(self, u):
        ue = u[self.edofs].reshape(-1, 4, 2)                  # (e, a, i)
        return np.eye(2) + np.einsum("eai,egaJ->egiJ", ue, self.dNdX)

    def _unit_stress(self, F):
        C = np.einsum("egkI,egkJ->egIJ", F, F)
        E = 0.5 * (C - np.eye(2))
        tr = np.trace(E, axis1=-2, axis2=-1)[..., None, None]
        return E, self.lam1 * tr * np.eye(2) + 2.0 * self.mu1 * E

    def unit_element_forces(self, u):
        """Element internal force vectors for unit modulus, shape ``(e, 8)``."""
        F = self.deformation_gradient(u)
        _, S = self._unit_stress(F)
        P = np.einsum("egiK,egKJ->egiJ", F, S)
        f = np.einsum("eg,egiJ,egaJ->eai", self.wdet, P, self.dNdX)
        return f.reshape(-1, 8)

    def strain_energy(self, u, psi):
        F = self.deformation_gradient(u)
        E, S = self._unit_stress(F)
        dens = 0.5 * np.einsum("egIJ,egIJ->eg", S, E)
        return float(np.sum(psi * np.sum(self.wdet * dens, axis=1)))

    def internal_force(self, u, psi):
        fe = psi[:, None] * self.unit_element_forces(u)
        return np.bincount(self.edofs.ravel(), weights=fe.ravel(), minlength=self.mesh.n_dofs), fe

    def tangent(self, u, psi):
        """Assembled consistent tangent (material plus geometric part), CSR."""
        F = self.deformation_gradient(u)
        _, S = self._unit_stress(F)
        FFt = F @ np.swapaxes(F, -1, -2)
        dN = self.dNdX
        w = self.wdet[..., None, None]
        ne = F.shape[0]
        Fd = (dN @ np.swapaxes(F, -1, -2)).reshape(ne, 4, 8)    # (e, g, a*2+i) = F_iJ dN_aJ
        outer = np.swapaxes(Fd * self.wdet[..., None], 1, 2) @ Fd  # sum_g w Fd_ai Fd_bk
        outer = outer.reshape(ne, 4, 2, 4, 2)
        H = np.sum(w * (dN @ S @ np.swapaxes(dN, -1, -2)), axis=1)   # (e, a, b)
        M = w * (dN @ np.swapaxes(dN, -1, -2))                        # (e, g, a, b)
        MF = np.einsum("egab,egik->eaibk", M, FFt)
        Ke = (H[:, :, None, :, None] * np.eye(2)[None, None, :, None, :]
              + self.mu1 * MF
              + self.lam1 * outer
              + self.mu1 * outer.transpose(0, 1, 4, 3, 2)).reshape(-1, 8, 8)
        Ke = psi[:, None, None] * Ke
        n = self.mesh.n_dofs
        K = sp.coo_matrix((Ke.ravel(), (self._rows, self._cols)), shape=(n, n))
        return K.tocsr()


def _newton(asm, psi, bc, u0, tol_abs, max_iter, history):
    u = u0.copy()
    free = bc.free_dofs(asm.mesh.n_dofs)
    for it in range(max_iter + 1):
        fint, _ = asm.internal_force(u, psi)
        R = (fint - bc.f_ext)[free]
        rn = float(np.linalg.norm(R))
        history.append(rn)
        if not np.isfinite(rn):
            return None, it
        if rn <= tol_abs:
            return u, it
        if it == max_iter:
            return None, it
        K = asm.tangent(u, psi)[free][:, free].tocsc()
        try:
            du = spla.spsolve(K, -R)
        except RuntimeError:
            return None, it
        if not np.all(np.isfinite(du)):
            return None, it
        u[free] += du
    return None, max_iter


def solve_forward(mesh: Mesh, psi, nu, bc: BoundaryConditions, tol=1e-10, max_iter=25,
                  n_increments=4, assembler: Assembler | None = None):
    """Solve static equilibrium for element moduli ``psi`` (not log-moduli).

    Converges when the free-dof residual norm is at most ``tol * ||f_ext||``.
    A failed full-load attempt is retried with ``n_increments`` equal load
    steps; if that also fails a :class:`SolverError` is raised.
    """
    psi = np.asarray(psi, dtype=float)
    if psi.shape != (mesh.n_elements,) or np.any(psi <= 0) or not np.all(np.isfinite(psi)):
        raise ValueError("psi must be a positive finite vector with one entry per element")
    asm = assembler or Assembler(mesh, nu)
    free = bc.free_dofs(mesh.n_dofs)
    fnorm = float(np.linalg.norm(bc.f_ext[free]))
    tol_abs = tol * fnorm if fnorm > 0 else 0.0
    history = []
    u0 = np.zeros(mesh.n_dofs)
    u, its = _newton(asm, psi, bc, u0, tol_abs, max_iter, history)
    steps = 1
    if u is None:
        steps = n_increments
        u = u0
        its = 0
        for k in range(1, n_increments + 1):
            step_bc = bc.scaled(k / n_increments)
            step_tol = tol * k / n_increments * fnorm
            u, n = _newton(asm, psi, step_bc, u, step_tol, max_iter, history)
            its += n
            if u is None:
                raise SolverError("Newton iteration failed after load stepping",
                                  {"history": history, "increment": k,
                                   "n_increments": n_increments})
    K = asm.tangent(u, psi)[free][:, free].tocsc()
    fint, fe = asm.internal_force(u, psi)
    try:
        lu = spla.splu(K)
    except RuntimeError as exc:
        raise SolverError("tangent is singular at the converged state",
                          {"history": history}) from exc
    return FemState(u=u, residual_norm=history[-1], iterations=its, history=history,
                    load_steps=steps, tangent_lu=lu, element_forces=fe, free=free)


def observation_dofs(mesh: Mesh, bc: BoundaryConditions, half=False):
    """Observed dof ids: both components of every unclamped node, node-major.

    With ``half=True`` only every second unclamped node (in node order) is kept.
    """
    clamped = np.zeros(mesh.n_nodes, dtype=bool)
    clamped[bc.dirichlet_dofs // 2] = True
    nodes = np.flatnonzero(~clamped)
    if half:
        nodes = nodes[::2]
    return np.column_stack([2 * nodes, 2 * nodes + 1]).ravel()


def extract_observations(state: FemState, obs_dofs):
    return state.u[obs_dofs].copy()


def observation_jacobian(mesh: Mesh, state: FemState, obs_dofs):
    """``dy/dPsi`` with respect to element log-moduli, shape ``(d_y, n_elements)``.

    Uses the factorised tangent stored in ``state``.  Back substitution runs
    over whichever of ``d_y`` and ``n_elements`` is smaller.
    """
    if state.tangent_lu is None or state.element_forces is None:
        raise ValueError("state does not carry a factorised tangent")
    free = state.free
    pos = -np.ones(mesh.n_dofs, dtype=int)
    pos[free] = np.arange(free.size)
    rows = pos[obs_dofs]
    if np.any(rows < 0):
        raise ValueError("observations include clamped degrees of freedom")
    edofs = np.empty((mesh.n_elements, 8), dtype=int)
    edofs[:, 0::2] = 2 * mesh.elements
    edofs[:, 1::2] = 2 * mesh.elements + 1
    fpos = pos[edofs]
    keep = fpos >= 0
    ecol = np.repeat(np.arange(mesh.n_elements), 8).reshape(-1, 8)
    B = sp.csc_matrix((state.element_forces[keep], (fpos[keep], ecol[keep])),
                      shape=(free.size, mesh.n_elements))
    d_y, d_psi = rows.size, mesh.n_elements
    if d_psi <= d_y:
        X = state.tangent_lu.solve(B.toarray())
        return -X[rows]
    sel = np.zeros((free.size, d_y))
    sel[rows, np.arange(d_y)] = 1.0
    Z = state.tangent_lu.solve(sel, trans="T")
    return -np.asarray((B.T @ Z).T)
