"""Numerical experiments on prescribed-curvature equations and critical functions."""

from .errors import *  # noqa: F401,F403
from .manifold import Field, Kind, ManifoldModel, integrate, laplacian
from .functional import (Ceiling, ClassKind, ContinuationSchedule, Triple, classify,
                         lambda_critical, make_triple, quotient_J, solve_subcritical)
from .green import build_green, mass, mass_fit
from .cli import parse_field_expr

__version__ = "0.1.0"
