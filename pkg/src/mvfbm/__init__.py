"""mvfbm: mean-field SDEs driven by fractional Brownian motion (H > 1/2).

Interacting-particle solvers, coupled Volterra path generation, and
Monte Carlo measure-derivative estimators with divergence weights,
cross-checked against finite-difference oracles.
"""

from .bismut import estimate_bismut, estimate_fd, lderiv_norm_estimate, tv_probe
from .fbm import generate_batch, generate_coupled, generate_exact_cholesky
from .grid import GridFunction, GridMismatchError, Hurst, TimeGrid
from .measure import EmpiricalMeasure, TestFunction, wasserstein
from .models import make_model
from .sensitivity import Direction, constant_direction
from .solver import DiffusionSpec, DriftSpec, InitialLaw, solve_euler, solve_picard

__all__ = [
    "DiffusionSpec",
    "Direction",
    "DriftSpec",
    "EmpiricalMeasure",
    "GridFunction",
    "GridMismatchError",
    "Hurst",
    "InitialLaw",
    "TestFunction",
    "TimeGrid",
    "constant_direction",
    "estimate_bismut",
    "estimate_fd",
    "generate_batch",
    "generate_coupled",
    "generate_exact_cholesky",
    "lderiv_norm_estimate",
    "make_model",
    "solve_euler",
    "solve_picard",
    "tv_probe",
    "wasserstein",
]
__version__ = "0.1.0"
