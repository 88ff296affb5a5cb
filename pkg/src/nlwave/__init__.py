"""Time-periodic solutions of ``omega^2 u_tt - a(t) u_xx = eps f(t, x, u)`` on the torus."""

__version__ = "0.1.0"

from .spectral import (  # noqa: E402
    FourierField,
    NonlinearitySpec,
    TimeFunction,
    h1norm_time,
    multiply,
    snorm,
)
from .nash_moser import Problem, SolverParams, run  # noqa: E402

__all__ = ["FourierField", "NonlinearitySpec", "TimeFunction", "h1norm_time", "multiply",
           "snorm", "Problem", "SolverParams", "run", "__version__"]
