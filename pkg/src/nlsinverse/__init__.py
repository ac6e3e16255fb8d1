"""Numerical laboratory for a semilinear Schrodinger equation with an analytic nonlinearity.

Forward solves, high-order linearization, Carleman and FBI weight checks, and
inverse-stability experiments for the linear and nonlinear coefficients.
"""

from .spectral import (
    Grid,
    PotentialField,
    SpectralOperator,
    Trajectory,
    build_grid,
    eigendecompose,
    propagate,
    sobolev_norm,
)
from .nonlinearity import NonlinearitySpec

__all__ = [
    "Grid",
    "PotentialField",
    "SpectralOperator",
    "Trajectory",
    "NonlinearitySpec",
    "build_grid",
    "eigendecompose",
    "propagate",
    "sobolev_norm",
]

__version__ = "0.1.0"
