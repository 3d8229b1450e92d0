"""Mixtures of low-rank Gaussians for multimodal Bayesian inverse problems."""
from .model import ForwardModel, Observation, SolverError
from .toy import ToyModel, toy_evaluate, toy_gradient, toy_posterior_grid

__version__ = "0.1.0"
