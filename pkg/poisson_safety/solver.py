"""Red-black SOR solver for Poisson/Laplace Dirichlet problems on a cell grid

The discrete operator is the 5-point Laplacian

    (h[j, i-1] + h[j, i+1] + h[j-1, i] + h[j+1, i] - 4 h[j, i]) / dx^2

applied on the solved cells. Every other cell keeps a fixed Dirichlet value, and
cells beyond the array edge are Dirichlet zero. Red cells ((i + j) even) are
relaxed first, then black cells. Within one colour a cell only reads cells of the
other colour, so rows are relaxed in parallel and the result does not depend on
the thread count.
"""

import logging
import math
import os
import time
from dataclasses import dataclass

import numba
import numpy as np
from numba import njit, prange

from .errors import ConvergenceError, ShapeMismatchError
from .model import DEFAULT_TOL, ScalarField, SolverConfig

__all__ = [
    "DEFAULT_TOL",
    "SolverConfig",
    "DirichletProblem",
    "SolveStats",
    "optimal_omega",
    "sor_solve",
    "residual",
    "configure_threads",
]

logger = logging.getLogger(__name__)

MAX_ITER_PER_CELL_ROW = 50
THREADS_ENV = "PSAFE_THREADS"


@dataclass(frozen=True)
class SolveStats:
    """Statistics of one SOR solve

    Attributes:
        iterations: Full red-black iterations performed
        residual: Final max residual over solved cells
        omega: Relaxation factor used
        warm_started: Whether an initial guess was supplied
        wall_time: Seconds spent iterating
    """

    iterations: int
    residual: float
    omega: float
    warm_started: bool
    wall_time: float


@dataclass(frozen=True, eq=False)
class DirichletProblem:
    """Dirichlet problem for Poisson's equation on a subset of grid cells

    Attributes:
        mask: True on cells to solve for
        forcing: Right-hand side f, read on solved cells only
        boundary_values: Fixed values of the cells that are not solved, zeros if None
        initial: Initial guess for the solved cells, zeros if None
    """

    mask: np.ndarray
    forcing: ScalarField
    boundary_values: np.ndarray | None = None
    initial: ScalarField | None = None

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        if mask.shape != self.forcing.shape:
            raise ShapeMismatchError(f"Mask shape {mask.shape} does not match forcing shape {self.forcing.shape}")
        if self.boundary_values is None:
            boundary_values = np.zeros(mask.shape)
        else:
            boundary_values = np.asarray(self.boundary_values, dtype=np.float64)
        if boundary_values.shape != mask.shape:
            raise ShapeMismatchError(f"Boundary values shape {boundary_values.shape} does not match {mask.shape}")
        if not np.all(np.isfinite(boundary_values[~mask])):
            raise ValueError("Boundary values must be finite")
        if self.initial is not None and self.initial.shape != mask.shape:
            raise ShapeMismatchError(f"Initial guess shape {self.initial.shape} does not match {mask.shape}")
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "boundary_values", boundary_values)

    @property
    def resolution(self) -> float:
        return self.forcing.resolution

    def padded_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Initial iterate, forcing and mask with a one-cell Dirichlet-zero ring

        Returns:
            Tuple of (h, f, mask) arrays of shape (ny + 2, nx + 2)
        """
        start = self.initial.values if self.initial is not None else np.zeros(self.mask.shape)
        h = np.zeros((self.mask.shape[0] + 2, self.mask.shape[1] + 2))
        h[1:-1, 1:-1] = np.where(self.mask, start, self.boundary_values)
        f = np.zeros_like(h)
        f[1:-1, 1:-1] = np.where(self.mask, self.forcing.values, 0.0)
        mask = np.zeros(h.shape, dtype=bool)
        mask[1:-1, 1:-1] = self.mask
        return h, f, mask


@njit(cache=True)
def _relax_cell(h, f, j, i, omega, dx2):
    h[j, i] += omega * ((h[j, i - 1] + h[j, i + 1] + h[j - 1, i] + h[j + 1, i] - dx2 * f[j, i]) * 0.25 - h[j, i])


@njit(cache=True, parallel=True)
def _half_sweep(h, f, mask, color, omega, dx2):
    ny, nx = h.shape
    for j in prange(1, ny - 1):
        # first column with (i + j) % 2 == color
        for i in range(1 + (1 + j + color) % 2, nx - 1, 2):
            if mask[j, i]:
                _relax_cell(h, f, j, i, omega, dx2)


@njit(cache=True, parallel=True)
def _max_residual(h, f, mask, inv_dx2):
    ny, nx = h.shape
    row_max = np.zeros(ny)
    for j in prange(1, ny - 1):
        worst = 0.0
        for i in range(1, nx - 1):
            if mask[j, i]:
                r = abs((h[j, i - 1] + h[j, i + 1] + h[j - 1, i] + h[j + 1, i] - 4.0 * h[j, i]) * inv_dx2 - f[j, i])
                if r > worst:
                    worst = r
        row_max[j] = worst
    return row_max.max()


def optimal_omega(n: int) -> float:
    """Optimal SOR relaxation factor for the 5-point Laplacian on an n x n grid

    Args:
        n: Largest grid dimension

    Returns:
        2 / (1 + sin(pi / n)) clamped to [1, 2)

    Raises:
        ValueError: If n < 3
    """
    if n < 3:
        raise ValueError(f"Grid dimension must be at least 3, got {n}")
    omega = 2.0 / (1.0 + math.sin(math.pi / n))
    return min(max(omega, 1.0), math.nextafter(2.0, 0.0))


def sor_solve(
    problem: DirichletProblem,
    omega: float | None = None,
    tol: float = DEFAULT_TOL,
    max_iter: int | None = None,
) -> tuple[ScalarField, SolveStats]:
    """Solve a Dirichlet problem by red-black successive over-relaxation

    Args:
        problem: Problem to solve
        omega: Relaxation factor in [1, 2), defaults to optimal_omega(max(nx, ny))
        tol: Max residual of the discrete Laplacian at which iteration stops
        max_iter: Iteration cap, defaults to 50 * max(nx, ny)

    Returns:
        Tuple of (solution field carrying the stats, stats)

    Raises:
        ValueError: If omega or tol is out of range
        ConvergenceError: If max_iter iterations do not reach tol
    """
    n = max(problem.mask.shape)
    omega = optimal_omega(n) if omega is None else float(omega)
    if not 1.0 <= omega < 2.0:
        raise ValueError(f"Relaxation factor must lie in [1, 2), got {omega}")
    if not tol > 0:
        raise ValueError(f"Tolerance must be positive, got {tol}")
    max_iter = MAX_ITER_PER_CELL_ROW * n if max_iter is None else int(max_iter)

    h, f, mask = problem.padded_arrays()
    dx2 = problem.resolution**2
    inv_dx2 = 1.0 / dx2

    start = time.perf_counter()
    iterations = 0
    res = math.inf
    while iterations < max_iter:
        _half_sweep(h, f, mask, 0, omega, dx2)
        _half_sweep(h, f, mask, 1, omega, dx2)
        iterations += 1
        res = float(_max_residual(h, f, mask, inv_dx2))
        if res <= tol:
            break
    else:
        logger.warning("SOR stopped at %d iterations with residual %.3e (tol %.1e)", iterations, res, tol)
        raise ConvergenceError(res, iterations)

    stats = SolveStats(
        iterations=iterations,
        residual=res,
        omega=omega,
        warm_started=problem.initial is not None,
        wall_time=time.perf_counter() - start,
    )
    logger.debug(
        "SOR converged: %d iterations, residual %.3e, omega %.4f, warm %s",
        stats.iterations,
        stats.residual,
        stats.omega,
        stats.warm_started,
    )
    field = ScalarField(h[1:-1, 1:-1], problem.forcing.resolution, problem.forcing.origin, stats)
    return field, stats


def residual(field: ScalarField, problem: DirichletProblem) -> float:
    """Max residual |lap(h) - f| over the solved cells of a problem

    Args:
        field: Candidate solution, including its values on non-solved cells
        problem: Problem whose mask and forcing are used

    Returns:
        Max absolute residual

    Raises:
        ShapeMismatchError: If the field does not match the problem grid
    """
    if field.shape != problem.mask.shape:
        raise ShapeMismatchError(f"Field shape {field.shape} does not match problem shape {problem.mask.shape}")
    _, f, mask = problem.padded_arrays()
    h = np.zeros(f.shape)
    h[1:-1, 1:-1] = field.values
    return float(_max_residual(h, f, mask, 1.0 / problem.resolution**2))


def configure_threads(threads: int | None = None) -> int:
    """Cap the number of threads used by parallel sweeps

    Args:
        threads: Thread count, 0 for the numba default; read from PSAFE_THREADS if None

    Returns:
        Number of threads in effect
    """
    if threads is None:
        raw = os.environ.get(THREADS_ENV, "0").strip() or "0"
        try:
            threads = int(raw)
        except ValueError as e:
            raise ValueError(f"{THREADS_ENV} must be an integer, got '{raw}'") from e
    if threads < 0:
        raise ValueError(f"Thread count must be non-negative, got {threads}")

    limit = numba.config.NUMBA_NUM_THREADS
    numba.set_num_threads(min(threads, limit) if threads > 0 else limit)
    return numba.get_num_threads()
