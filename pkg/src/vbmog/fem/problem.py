"""Elastography scenario: ground-truth fields, synthetic data and the forward model."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..model import ForwardModel, Observation
from .mesh import Mesh
from .solver import (Assembler, BoundaryConditions, extract_observations,
                     observation_dofs, observation_jacobian, solve_forward)


@dataclass(frozen=True)
class Inclusion:
    """Stiff region of constant modulus.

    ``shape`` is ``"circle"``, ``"ellipse"`` or ``"rectangle"``; ``radii`` holds
    the semi-axes (half side lengths for rectangles).  A circle uses
    ``radii[0]`` only.
    """

    shape: str
    center: tuple
    radii: tuple
    modulus: float

    def contains(self, xy):
        xy = np.atleast_2d(xy)
        dx = xy[:, 0] - self.center[0]
        dy = xy[:, 1] - self.center[1]
        rx = self.radii[0]
        ry = self.radii[0] if self.shape == "circle" else self.radii[1]
        if self.shape in ("circle", "ellipse"):
            return (dx / rx) ** 2 + (dy / ry) ** 2 <= 1.0
        if self.shape == "rectangle":
            return (np.abs(dx) <= rx) & (np.abs(dy) <= ry)
        raise ValueError(f"unknown inclusion shape {self.shape!r}")


def inclusion_mask(mesh: Mesh, inclusions, membership_mesh: Mesh | None = None):
    """Boolean mask of elements inside any inclusion.

    Membership is decided at element centroids.  When ``membership_mesh`` is
    given (a coarser mesh that ``mesh`` refines), each element inherits the
    membership of its parent coarse element, so the field is exactly
    representable on the coarse mesh.
    """
    if membership_mesh is None:
        cents = mesh.centroids
    else:
        cents = membership_mesh.centroids[mesh.parent_elements(membership_mesh)]
    mask = np.zeros(mesh.n_elements, dtype=bool)
    for inc in inclusions:
        mask |= inc.contains(cents)
    return mask


def log_modulus_field(mesh: Mesh, background, inclusions, membership_mesh=None):
    """Element-wise natural log of Young's modulus; later inclusions win on overlap."""
    if membership_mesh is None:
        cents = mesh.centroids
    else:
        cents = membership_mesh.centroids[mesh.parent_elements(membership_mesh)]
    field = np.full(mesh.n_elements, np.log(background))
    for inc in inclusions:
        field[inc.contains(cents)] = np.log(inc.modulus)
    return field


class FemModel(ForwardModel):
    """Displacements at observed nodes as a function of element log-moduli."""

    def __init__(self, mesh: Mesh, nu=0.3, traction=(0.0, -100.0), half=False,
                 newton_tol=1e-10):
        self.mesh = mesh
        self.nu = float(nu)
        self.bc = BoundaryConditions.clamped_bottom_traction_top(mesh, traction)
        self.obs_dofs = observation_dofs(mesh, self.bc, half=half)
        self.newton_tol = newton_tol
        self._asm = Assembler(mesh, nu)
        super().__init__(d_psi=mesh.n_elements, d_y=self.obs_dofs.size)

    def solve(self, psi):
        return solve_forward(self.mesh, np.exp(psi), self.nu, self.bc, tol=self.newton_tol,
                             assembler=self._asm)

    def _evaluate(self, psi):
        return extract_observations(self.solve(psi), self.obs_dofs)

    def _evaluate_with_jacobian(self, psi):
        state = self.solve(psi)
        return (extract_observations(state, self.obs_dofs),
                observation_jacobian(self.mesh, state, self.obs_dofs))


def generate_synthetic(fine_mesh: Mesh, psi_true, snr, seed, coarse_mesh: Mesh,
                       nu=0.3, traction=(0.0, -100.0), half=False):
    """Noisy observations on ``coarse_mesh`` computed with a solve on ``fine_mesh``.

    The fine solution is sampled at the fine nodes that coincide with coarse
    nodes and then restricted to the coarse observation set.  Noise is
    i.i.d. Gaussian with standard deviation ``RMS(y) / snr``; ``snr=inf``
    returns the noise-free signal.

    Returns
    -------
    observation : Observation
    y_clean : ndarray
        Noise-free signal at the observed coarse degrees of freedom.
    """
    if not snr > 0:
        raise ValueError("snr must be positive")
    bc_fine = BoundaryConditions.clamped_bottom_traction_top(fine_mesh, traction)
    state = solve_forward(fine_mesh, np.exp(psi_true), nu, bc_fine)
    nodes = fine_mesh.coincident_nodes(coarse_mesh)
    u_coarse = np.column_stack([state.u[2 * nodes], state.u[2 * nodes + 1]]).ravel()
    bc_coarse = BoundaryConditions.clamped_bottom_traction_top(coarse_mesh, traction)
    y = u_coarse[observation_dofs(coarse_mesh, bc_coarse, half=half)]
    if np.isinf(snr):
        return Observation(y.copy(), None, {"snr": float(snr), "sigma": 0.0}), y
    sigma = float(np.sqrt(np.mean(y**2)) / snr)
    rng = np.random.default_rng(seed)
    noisy = y + sigma * rng.standard_normal(y.size)
    return Observation(noisy, 1.0 / sigma**2, {"snr": float(snr), "sigma": sigma}), y


def write_element_csv(path, mesh: Mesh, columns: dict):
    """CSV with element id, centroid coordinates and one column per named field."""
    path = Path(path)
    names = list(columns)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["element", "cx", "cy", *names])
        for e in range(mesh.n_elements):
            cx, cy = mesh.centroids[e]
            w.writerow([e, repr(float(cx)), repr(float(cy)),
                        *[repr(float(columns[n][e])) for n in names]])
