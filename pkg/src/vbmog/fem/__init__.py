"""Plane-strain hyperelastic finite elements for the elastography forward model."""
from .material import lame_parameters, pk2_stress, strain_energy
from .mesh import Mesh, incidence_matrix
from .problem import FemModel, Inclusion, generate_synthetic, log_modulus_field
from .solver import (BoundaryConditions, FemState, extract_observations,
                     observation_dofs, observation_jacobian, solve_forward)
