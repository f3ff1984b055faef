"""Nash-Moser iteration with eps-dependent smoothing, and two instances built on it:
standing relaxation shock profiles and a quasilinear periodic hyperbolic problem."""

from .engine import SolveResult, run_nash_moser, run_newton
from .fnspace import Grid, NormSpec, norm, smooth
from .scheduler import NmParams, feasibility, feasible_pick

__all__ = [
    "Grid", "NormSpec", "NmParams", "SolveResult",
    "feasibility", "feasible_pick", "norm", "run_nash_moser", "run_newton", "smooth",
]
__version__ = "0.1.0"
