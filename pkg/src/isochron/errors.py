"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class IsochronError(Exception):
    """Base class for every error raised by the package."""


class InvalidRepresentation(IsochronError, ValueError):
    """Malformed knot vector, spline order or coefficient layout."""


class GridMismatch(IsochronError, ValueError):
    """Operands live on different knot grids or truncation orders."""


class DomainError(IsochronError, ValueError):
    """An argument has the wrong winding index for the operation."""


class MonotonicityError(IsochronError):
    """A circle map is not strictly increasing on its samples."""


class InversionFailure(IsochronError):
    """No inversion method produced a usable inverse."""


class DivisionDegeneracy(IsochronError):
    """A derivative or denominator vanishes at some knot."""


class NoContraction(IsochronError):
    """The transfer cocycle of a cohomological equation does not contract."""


class CohoNoConvergence(IsochronError):
    """Doubling cap reached with the residual above tolerance."""

    def __init__(self, message: str, residual: float, solution=None):
        super().__init__(message)
        self.residual = residual
        self.solution = solution


class FrameDegeneracy(IsochronError):
    """The frame DW(a, lambda s) is (numerically) singular: bundle collapse."""


class ResonanceError(IsochronError):
    """Both the forward and the reversed cohomological equation fail to contract."""


class StepFailure(IsochronError):
    """A quasi-Newton step could not be completed."""

    def __init__(self, message: str, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class SolverDivergence(IsochronError):
    """The iterates grew past the divergence guard."""

    def __init__(self, message: str, history=None):
        super().__init__(message)
        self.history = history or []


class SolverNoConvergence(IsochronError):
    """Iteration cap reached, or progress stalled, above tolerance."""

    def __init__(self, message: str, history=None, best=None):
        super().__init__(message)
        self.history = history or []
        self.best = best


class OrbitNotFound(IsochronError):
    """Newton iteration for a periodic orbit did not converge."""


class BracketError(IsochronError):
    """A scalar root finder lost its sign-changing bracket."""


class ConfigError(IsochronError, ValueError):
    """Invalid run configuration."""
