"""Exception hierarchy for the bulk-surface wave solver.

Configuration problems derive from ``ConfigError`` (CLI exit code 2),
numerical failures from ``NumericalError`` (CLI exit code 3).
"""

from typing import Optional


class BulkSurfaceError(Exception):
    """Base class for all solver errors"""


class ConfigError(BulkSurfaceError, ValueError):
    """Invalid user configuration or study definition"""


class NumericalError(BulkSurfaceError):
    """A numerical step could not be completed"""


# Geometry and mesh

class AmbiguousProjection(NumericalError):
    """The closest point on the boundary is not unique"""


class DegenerateElement(NumericalError):
    """A triangle with non-positive area was encountered"""


class ZeroLengthEdge(NumericalError):
    """A boundary edge has zero length"""


class InvalidArgument(ConfigError):
    """An argument is outside its admissible range"""


# Assembly

class MissingField(ConfigError):
    """The problem variant needs a coefficient field that was not supplied"""


# Linear algebra

class DimensionMismatch(NumericalError):
    """Operand dimensions do not agree"""


class SingularMatrix(NumericalError):
    """The matrix is singular for the requested operation"""


class SingularStageMatrix(SingularMatrix):
    """The Runge-Kutta stage matrix could not be factorized"""


class NoConvergence(NumericalError):
    """An iterative solver stopped before reaching its tolerance"""

    def __init__(self, message: str, iterations: Optional[int] = None):
        super().__init__(message)
        self.iterations = iterations


# Time stepping and analysis

class Unsupported(ConfigError):
    """The requested method variant is not available"""


class HierarchyMismatch(ConfigError):
    """Two solutions do not live on compatible levels of one hierarchy"""


class MissingGradient(ConfigError):
    """An exact gradient callable is required but was not supplied"""


class NonPositiveError(NumericalError):
    """An error value used for a convergence rate is not positive"""


# Harness

class UnknownScenario(ConfigError):
    """The scenario name is not in the catalog"""
