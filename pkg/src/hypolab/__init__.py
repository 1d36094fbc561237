"""Spectral and Monte Carlo laboratory for hypocoercive decay of Langevin dynamics."""

__version__ = "0.1.0"

from .errors import HypolabError, NumericalError, ValidationError
from .model import ModelParams, Potential, make_even_power_potential, make_harmonic_potential, potential_from_id

__all__ = [
    "HypolabError",
    "ModelParams",
    "NumericalError",
    "Potential",
    "ValidationError",
    "__version__",
    "make_even_power_potential",
    "make_harmonic_potential",
    "potential_from_id",
]
