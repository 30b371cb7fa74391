"""Exception hierarchy shared by every critlab module."""

from __future__ import annotations


class CritlabError(Exception):
    """Base class for all library errors."""


class SolverError(CritlabError):
    """Numerical failure inside a solver (maps to CLI exit code 2)."""


class ConfigError(CritlabError):
    """Invalid user input (maps to CLI exit code 3)."""


class GridMismatch(ConfigError):
    """A Field does not live on the manifold it is used with."""


class ChartRadiusError(ConfigError):
    """Requested chart or cutoff radius exceeds the injectivity radius."""


class NotCoercive(SolverError):
    def __init__(self, margin: float):
        super().__init__(f"operator is not coercive (margin {margin:.3e})")
        self.margin = margin


class NoConvergence(SolverError):
    def __init__(self, tol: float, iterations: int, residual: float | None = None):
        msg = f"no convergence to tol {tol:.1e} after {iterations} iterations"
        if residual is not None:
            msg += f" (residual {residual:.3e})"
        super().__init__(msg)
        self.tol = tol
        self.iterations = iterations
        self.residual = residual


class NonpositiveIterate(SolverError):
    """The fixed-point iterate lost positivity on a non-negligible mass."""


class ResolutionLimit(SolverError):
    """The iterate collapsed onto a few grid nodes: the discrete problem no longer
    resolves the concentrating solution."""


class CeilingViolation(SolverError):
    def __init__(self, lam: float, ceiling: float, tol: float, estimate=None):
        super().__init__(
            f"lambda estimate {lam:.8g} exceeds ceiling {ceiling:.8g} by more than {tol:.1e}")
        self.lam = lam
        self.ceiling = ceiling
        self.tol = tol
        self.estimate = estimate


class DenominatorNonpositive(CritlabError):
    """The constraint integral of the quotient is not positive."""


class DivergentIntegral(ConfigError):
    """Radial integral parameters outside the convergence range."""


class FitUnstable(SolverError):
    """A regression window is too close to the grid scale or underdetermined."""


class NoSignChange(SolverError):
    def __init__(self, lo, hi):
        super().__init__(f"classification does not flip on the path: {lo} at t_lo, {hi} at t_hi")
        self.lo = lo
        self.hi = hi


class NotAMaximum(ConfigError):
    """The requested point is not a maximum of f."""


class PreconditionFailed(ConfigError):
    """An operation was called outside its documented domain."""


class ContradictionFlag(CritlabError):
    """A weakly critical triple shows a positive Green mass at a maximum of f."""

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class ExprSyntaxError(ConfigError):
    def __init__(self, position: int, expected: str, found: str):
        super().__init__(f"syntax error at position {position}: expected {expected}, found {found}")
        self.position = position
        self.expected = expected
        self.found = found


class UnknownIdentifier(ConfigError):
    def __init__(self, name: str, position: int):
        super().__init__(f"unknown identifier {name!r} at position {position}")
        self.name = name
        self.position = position
