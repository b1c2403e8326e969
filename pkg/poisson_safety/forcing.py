"""Forcing functions for the safety Poisson problem and the harmonic guidance field"""

import logging
from dataclasses import dataclass

import numpy as np

from .errors import EmptyDomainError, ShapeMismatchError
from .grid import distance_field, shift
from .model import (
    DEFAULT_TOL,
    BoundaryFluxSpec,
    DomainDecomposition,
    ForcingConfig,
    ForcingKind,
    ScalarField,
    SolverConfig,
    VectorField,
)
from .solver import DirichletProblem, sor_solve

__all__ = [
    "SOFTPLUS_CEILING",
    "ForcingResult",
    "holder_forcing",
    "average_flux_forcing",
    "constant_forcing",
    "guidance_boundary_values",
    "solve_guidance_field",
    "divergence",
    "softplus_forcing",
    "build_forcing",
]

logger = logging.getLogger(__name__)

# largest value a softplus forcing may take, keeps it strictly negative
SOFTPLUS_CEILING = -1e-300


@dataclass(frozen=True, eq=False)
class ForcingResult:
    """Forcing over the free set and the intermediate fields it was built from

    Attributes:
        forcing: Forcing values on FREE cells, 0 elsewhere
        guidance: Guidance field, guidance forcing only
        divergence: Divergence of the guidance field, guidance forcing only
    """

    forcing: ScalarField
    guidance: VectorField | None = None
    divergence: ScalarField | None = None


def holder_forcing(dist: ScalarField, alpha: float, free: np.ndarray | None = None) -> ScalarField:
    """Hölder continuous forcing -(dist / max dist)^alpha

    Args:
        dist: Unsigned distance to the boundary
        alpha: Exponent in (0, 1)
        free: Cells to fill, every cell with positive distance if None

    Returns:
        Forcing, 0 outside the filled cells

    Raises:
        ValueError: If alpha is outside (0, 1) or the distance has no positive value
    """
    if not 0 < alpha < 1:
        raise ValueError(f"Hölder exponent must lie in (0, 1), got {alpha}")
    d = dist.values
    mask = d > 0 if free is None else np.asarray(free, dtype=bool)
    if mask.shape != d.shape:
        raise ShapeMismatchError(f"Free mask shape {mask.shape} does not match distance shape {d.shape}")
    if np.any(d[mask] < 0):
        raise ValueError("Distance must be non-negative on the free set")
    d_max = d[mask].max(initial=0.0)
    if not d_max > 0:
        raise ValueError("Distance field has no positive value")

    return dist.like(np.where(mask, -((d / d_max) ** alpha), 0.0))


def average_flux_forcing(decomp: DomainDecomposition, b_bar: float) -> float:
    """Constant forcing whose solution has average boundary flux b_bar

    By the divergence theorem the total flux through the boundary equals the
    integral of the forcing, so f = b_bar * perimeter / area.

    Args:
        decomp: Domain decomposition
        b_bar: Desired average outward flux, negative

    Returns:
        Constant forcing value

    Raises:
        ValueError: If b_bar is not negative
        EmptyDomainError: If the free area or perimeter vanishes
    """
    if not b_bar < 0:
        raise ValueError(f"Average flux must be negative, got {b_bar}")
    if not decomp.free_area > 0 or not decomp.perimeter > 0:
        raise EmptyDomainError("Average flux forcing needs positive free area and perimeter")
    return b_bar * decomp.perimeter / decomp.free_area


def constant_forcing(decomp: DomainDecomposition, value: float) -> ScalarField:
    """Field equal to value on FREE cells and 0 elsewhere"""
    return ScalarField.on_grid(decomp.grid, np.where(decomp.free, value, 0.0))


def guidance_boundary_values(decomp: DomainDecomposition, flux_spec: BoundaryFluxSpec) -> tuple[np.ndarray, np.ndarray]:
    """Dirichlet data b * n for both guidance components

    Args:
        decomp: Domain decomposition
        flux_spec: Boundary flux per obstacle

    Returns:
        Tuple of (x component, y component) arrays, 0 off the boundary
    """
    flux_by_obstacle = np.array([0.0] + [flux_spec.flux_for(i) for i in range(1, decomp.n_obs + 1)])
    flux = np.where(decomp.boundary, flux_by_obstacle[decomp.obstacle_index], 0.0)
    return flux * decomp.normals[..., 0], flux * decomp.normals[..., 1]


def solve_guidance_field(
    decomp: DomainDecomposition,
    flux_spec: BoundaryFluxSpec,
    tol: float = DEFAULT_TOL,
    max_iter: int | None = None,
    omega: float | None = None,
    initial: VectorField | None = None,
) -> VectorField:
    """Harmonic guidance field with boundary data b * n

    Each component solves Laplace's equation on the free set.

    Args:
        decomp: Domain decomposition
        flux_spec: Boundary flux per obstacle
        tol: Solver residual tolerance
        max_iter: Solver iteration cap
        omega: Relaxation factor
        initial: Warm start, e.g. the previous frame's guidance field

    Returns:
        Guidance field; each component carries its solve stats

    Raises:
        ConvergenceError: If a component solve does not converge
    """
    zero = ScalarField.on_grid(decomp.grid, np.zeros(decomp.grid.shape))
    components = []
    for axis, values in enumerate(guidance_boundary_values(decomp, flux_spec)):
        start = None if initial is None else (initial.x, initial.y)[axis]
        problem = DirichletProblem(decomp.free, zero, values, start)
        field, _ = sor_solve(problem, omega=omega, tol=tol, max_iter=max_iter)
        components.append(field)
    return VectorField(*components)


def _axis_derivative(values: np.ndarray, free: np.ndarray, dy: int, dx: int, resolution: float) -> np.ndarray:
    ahead, behind = shift(values, dy, dx), shift(values, -dy, -dx)
    ahead_free, behind_free = shift(free, dy, dx, fill=False), shift(free, -dy, -dx, fill=False)
    central = (ahead - behind) / (2 * resolution)
    derivative = np.where(
        ahead_free & behind_free,
        central,
        np.where(
            ahead_free,
            (ahead - values) / resolution,
            np.where(behind_free, (values - behind) / resolution, central),
        ),
    )
    return np.where(free, derivative, 0.0)


def divergence(v: VectorField, free: np.ndarray | None = None) -> ScalarField:
    """Divergence by finite differences

    Central differences where both neighbours along an axis are free, one-sided
    differences toward the free neighbour beside boundary cells.

    Args:
        v: Vector field
        free: Cells to evaluate, every cell if None

    Returns:
        Divergence, 0 outside the evaluated cells
    """
    mask = np.ones(v.shape, dtype=bool) if free is None else np.asarray(free, dtype=bool)
    if mask.shape != v.shape:
        raise ShapeMismatchError(f"Free mask shape {mask.shape} does not match field shape {v.shape}")
    res = v.x.resolution
    div = _axis_derivative(v.x.values, mask, 0, 1, res) + _axis_derivative(v.y.values, mask, 1, 0, res)
    return v.x.like(div)


def softplus_forcing(div: ScalarField, beta: float, free: np.ndarray | None = None) -> ScalarField:
    """Strictly negative forcing -(1 / beta) * log(1 + exp(-beta * div))

    Args:
        div: Divergence of the guidance field
        beta: Sharpness, positive
        free: Cells to fill, every cell if None

    Returns:
        Forcing, 0 outside the filled cells

    Raises:
        ValueError: If beta is not positive
    """
    if not beta > 0:
        raise ValueError(f"Softplus sharpness must be positive, got {beta}")
    f = np.minimum(-np.logaddexp(0.0, -beta * div.values) / beta, SOFTPLUS_CEILING)
    if free is not None:
        f = np.where(free, f, 0.0)
    return div.like(f)


def build_forcing(
    decomp: DomainDecomposition,
    config: ForcingConfig,
    solver: SolverConfig | None = None,
    prev: ForcingResult | None = None,
) -> ForcingResult:
    """Forcing over the free set for the configured construction

    Args:
        decomp: Domain decomposition
        config: Forcing selection and parameters
        solver: Solver parameters for the guidance field
        prev: Previous result, used to warm start the guidance field

    Returns:
        Forcing result
    """
    solver = solver or SolverConfig()
    if config.kind is ForcingKind.HOLDER:
        return ForcingResult(holder_forcing(distance_field(decomp), config.alpha, decomp.free))
    if config.kind is ForcingKind.AVGFLUX:
        return ForcingResult(constant_forcing(decomp, average_flux_forcing(decomp, config.b_bar)))

    initial = prev.guidance if prev is not None and prev.guidance is not None else None
    if initial is not None and initial.shape != decomp.grid.shape:
        initial = None
    guidance = solve_guidance_field(decomp, config.flux, solver.tol, solver.max_iter, solver.omega, initial)
    div = divergence(guidance, decomp.free)
    logger.debug("Guidance divergence in [%.3e, %.3e]", div.values[decomp.free].min(), div.values[decomp.free].max())
    return ForcingResult(softplus_forcing(div, config.beta, decomp.free), guidance, div)
