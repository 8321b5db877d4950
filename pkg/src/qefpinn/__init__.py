"""Quadrature-enhanced Monte Carlo fractional Laplacians and feature-enhanced PINNs."""

from .benchmarks import REGISTRY, get_case
from .fraclap import METHODS, FracLapConfig, frac_laplacian
from .geometry import UnitBall

__version__ = "0.1.0"

__all__ = ["METHODS", "REGISTRY", "FracLapConfig", "UnitBall", "frac_laplacian", "get_case", "__version__"]
