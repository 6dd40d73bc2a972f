"""Persistence of populations with nonlocal dispersal in a shifting niche.

Modules
-------
kernel, environment, discrete_operator, spectral, steady_state, evolution,
critical_speed, cli.
"""

from .errors import (
    ConvergenceError,
    MetzlerViolation,
    MonotonicityViolation,
    NoTailBound,
    ShiftNicheError,
    TransformDivergent,
    ValidationError,
)
from .kernel import make_kernel, moment, exponential_moment, reflect, truncate
from .environment import Logistic, Plateau, make_growth, niche_profile, tail_bounds
from .discrete_operator import Grid, assemble
from .spectral import lambda_p_limit, principal_eigenvalue
from .steady_state import solve_bounded, solve_bounded_viscous, vanishing_viscosity
from .evolution import integrate, long_time_classify
from .critical_speed import find_speeds, spectral_speed_bound

__version__ = "0.1.0"
