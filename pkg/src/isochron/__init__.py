"""Invariant circles and isochrons of dissipative maps by the parameterization method."""

from .circlefn import CircleFunction
from .taylorfield import TaylorField

__version__ = "0.1.0"

__all__ = ["CircleFunction", "TaylorField", "__version__"]
