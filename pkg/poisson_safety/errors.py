__all__ = [
    "PoissonSafetyError",
    "FormatError",
    "GridSizeError",
    "EmptyDomainError",
    "ShapeMismatchError",
    "ConvergenceError",
    "InfeasibleConstraintError",
    "UnsafeInitialStateError",
    "ScenarioError",
    "OutOfExtentError",
]


class PoissonSafetyError(Exception):
    """Base class for all errors raised by poisson_safety"""


class FormatError(PoissonSafetyError, ValueError):
    """Malformed PGM header, truncated raster, invalid sidecar or field CSV"""


class GridSizeError(PoissonSafetyError, ValueError):
    """Occupancy grid smaller than 3x3"""


class EmptyDomainError(PoissonSafetyError, ValueError):
    """No free cell remains in the occupancy grid"""


class ShapeMismatchError(PoissonSafetyError, ValueError):
    """Fields or masks do not share a grid"""


class ScenarioError(PoissonSafetyError, ValueError):
    """Malformed or inconsistent scenario description"""


class OutOfExtentError(PoissonSafetyError, ValueError):
    """Position outside the sampled grid extent"""


class ConvergenceError(PoissonSafetyError):
    """SOR iteration limit reached before the residual tolerance

    Attributes:
        residual: Max residual at the last iteration
        iterations: Number of iterations performed
    """

    def __init__(self, residual: float, iterations: int):
        super().__init__(f"SOR did not converge after {iterations} iterations (residual {residual:.3e})")
        self.residual = residual
        self.iterations = iterations


class InfeasibleConstraintError(PoissonSafetyError):
    """Safety filter constraint cannot be satisfied by any input"""


class UnsafeInitialStateError(PoissonSafetyError):
    """Scenario initial state lies outside the safe set"""
