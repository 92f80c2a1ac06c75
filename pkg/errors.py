"""
Exception hierarchy for orbitavg
"""
from typing import Iterable, List, Optional


class OrbitavgError(Exception):
    """Base class for every error raised by the library"""


class FrameMismatchError(OrbitavgError, ValueError):
    """Symbols live in different coordinate frames, or in the wrong one"""


class DimensionMismatchError(OrbitavgError, ValueError):
    """Symbol dimensions or point lengths disagree"""


class NonzeroAverageError(OrbitavgError, ValueError):
    """The trajectory average of the leading perturbation does not vanish"""

    def __init__(self, message: str, monomials: Optional[Iterable] = None):
        self.monomials: List = list(monomials or [])
        if self.monomials:
            shown = ", ".join(str(m) for m in self.monomials[:8])
            more = "" if len(self.monomials) <= 8 else f" (+{len(self.monomials) - 8} more)"
            message = f"{message}: resonant monomials {shown}{more}"
        super().__init__(message)


class ConvergenceError(OrbitavgError, RuntimeError):
    """A doubling scheme, refinement or integrator did not converge"""


class InvariantViolation(OrbitavgError, RuntimeError):
    """An internal identity check failed"""


class RegimeError(OrbitavgError, ValueError):
    """Parameters fall outside the regime an operation is valid in"""


class CriticalLevelError(OrbitavgError, ValueError):
    """A level set is critical or could not be traced"""


class EigensolveError(OrbitavgError, RuntimeError):
    """The dense eigensolver failed"""

    def __init__(self, message: str, stuck_index: Optional[int] = None):
        self.stuck_index = stuck_index
        if stuck_index is not None:
            message = f"{message} (unconverged from index {stuck_index})"
        super().__init__(message)
