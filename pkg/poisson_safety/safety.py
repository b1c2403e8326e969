"""Safety frames: the stitched safety function, its derivatives and invariant checks

A frame holds h over the whole grid: positive on the free set, zero on the
boundary cells and negative inside obstacles. Gradients and Hessians are grid
central differences. Between cell centres a frame is sampled by bilinear
interpolation of those fields or by a bicubic spline of h.
"""

import logging
from collections.abc import Iterable
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import numpy.typing as npt
from scipy.interpolate import RectBivariateSpline, RegularGridInterpolator

from .errors import OutOfExtentError, ShapeMismatchError
from .grid import NEIGHBOURS, shift
from .model import BoundaryFluxSpec, DomainDecomposition, Sampling, ScalarField, SolverConfig, VectorField
from .solver import DirichletProblem, SolveStats, sor_solve

__all__ = [
    "Probe",
    "SafetyFrame",
    "HopfReport",
    "CheckReport",
    "frame_from_field",
    "assemble_frame",
    "sample",
    "boundary_flux",
    "check_divergence",
    "outward_derivatives",
    "check_positivity_and_hopf",
    "check_boundary_flux",
    "dirichlet_energy",
    "check_dirichlet_energy",
    "check_frame",
]

logger = logging.getLogger(__name__)

ENERGY_STEPS = (1e-2, -1e-2, 1e-3, -1e-3)


@dataclass(frozen=True, eq=False)
class Probe:
    """Safety function sampled at one position

    Attributes:
        position: World position (x, y) in meters
        h: Value of h
        gradient: Dh as (h_x, h_y)
        hessian: Symmetric 2x2 matrix of second derivatives
        dh_dt: Time derivative of h, 0 without a previous frame
    """

    position: np.ndarray
    h: float
    gradient: np.ndarray
    hessian: np.ndarray
    dh_dt: float = 0.0


@dataclass(frozen=True, eq=False)
class SafetyFrame:
    """Timestamped safety function with precomputed derivatives

    Attributes:
        h: Safety function over the whole grid
        gradient: Central-difference gradient of h
        hessian: Second derivatives (h_xx, h_yy, h_xy)
        t: Timestamp in seconds
        dh_dt: Finite-difference time derivative against the previous frame, if any
    """

    h: ScalarField
    gradient: VectorField
    hessian: tuple[ScalarField, ScalarField, ScalarField]
    t: float = 0.0
    dh_dt: ScalarField | None = None

    @property
    def stats(self) -> SolveStats | None:
        return self.h.stats

    @cached_property
    def _interpolator(self) -> RegularGridInterpolator:
        h = self.h
        xs = h.origin[0] + h.resolution * np.arange(h.nx)
        ys = h.origin[1] + h.resolution * np.arange(h.ny)
        dh_dt = self.dh_dt.values if self.dh_dt is not None else np.zeros(h.shape)
        channels = np.stack(
            [h.values, self.gradient.x.values, self.gradient.y.values, *(c.values for c in self.hessian), dh_dt],
            axis=-1,
        )
        return RegularGridInterpolator((ys, xs), channels, method="linear", bounds_error=False, fill_value=None)

    @cached_property
    def _spline(self) -> RectBivariateSpline:
        h = self.h
        xs = h.origin[0] + h.resolution * np.arange(h.nx)
        ys = h.origin[1] + h.resolution * np.arange(h.ny)
        return RectBivariateSpline(ys, xs, h.values, kx=min(3, h.ny - 1), ky=min(3, h.nx - 1), s=0)

    def contains(self, position: npt.ArrayLike) -> bool:
        x, y = np.asarray(position, dtype=np.float64)
        h = self.h
        slack = 1e-9 * h.resolution
        return bool(
            h.origin[0] - slack <= x <= h.origin[0] + (h.nx - 1) * h.resolution + slack
            and h.origin[1] - slack <= y <= h.origin[1] + (h.ny - 1) * h.resolution + slack
        )

    def sample(self, position: npt.ArrayLike, method: Sampling | str = Sampling.BILINEAR) -> Probe:
        """Evaluate h and its derivatives at a position

        Bilinear sampling interpolates each grid field on its own, so the sampled
        gradient is not the slope of the sampled h. Spline sampling differentiates
        a single interpolating bicubic spline of h, so gradient and Hessian are the
        exact derivatives of the sampled h. dh_dt is bilinear either way.

        Args:
            position: World position (x, y) in meters
            method: Sampling method

        Returns:
            Probe at the position

        Raises:
            OutOfExtentError: If the position lies outside the cell-centre extent
        """
        position = np.asarray(position, dtype=np.float64).reshape(2)
        if not np.all(np.isfinite(position)) or not self.contains(position):
            raise OutOfExtentError(f"Position ({position[0]:.4g}, {position[1]:.4g}) lies outside the grid extent")
        h, hx, hy, hxx, hyy, hxy, dh_dt = self._interpolator([[position[1], position[0]]])[0]
        if Sampling(method) is Sampling.SPLINE:
            spline, y, x = self._spline, position[1], position[0]
            # spline axes are (y, x), so its dx differentiates along y
            h = spline.ev(y, x)
            hx, hy = spline.ev(y, x, dy=1), spline.ev(y, x, dx=1)
            hxx, hyy, hxy = spline.ev(y, x, dy=2), spline.ev(y, x, dx=2), spline.ev(y, x, dx=1, dy=1)
        return Probe(
            position=position,
            h=float(h),
            gradient=np.array([hx, hy], dtype=np.float64),
            hessian=np.array([[hxx, hxy], [hxy, hyy]], dtype=np.float64),
            dh_dt=float(dh_dt),
        )


def sample(frame: SafetyFrame, position: npt.ArrayLike, method: Sampling | str = Sampling.BILINEAR) -> Probe:
    """Sample a frame at a world position, see SafetyFrame.sample"""
    return frame.sample(position, method)


def _derivatives(values: np.ndarray, resolution: float) -> tuple[np.ndarray, ...]:
    # odd reflection keeps the central stencil at the array edge
    p = np.pad(values, 1, mode="reflect", reflect_type="odd")
    c = p[1:-1, 1:-1]
    h_x = (p[1:-1, 2:] - p[1:-1, :-2]) / (2 * resolution)
    h_y = (p[2:, 1:-1] - p[:-2, 1:-1]) / (2 * resolution)
    h_xx = (p[1:-1, 2:] - 2 * c + p[1:-1, :-2]) / resolution**2
    h_yy = (p[2:, 1:-1] - 2 * c + p[:-2, 1:-1]) / resolution**2
    h_xy = (p[2:, 2:] - p[2:, :-2] - p[:-2, 2:] + p[:-2, :-2]) / (4 * resolution**2)
    return h_x, h_y, h_xx, h_yy, h_xy


def frame_from_field(h: ScalarField, t: float = 0.0, prev: SafetyFrame | None = None) -> SafetyFrame:
    """Build a frame from a safety function by central differences

    Args:
        h: Safety function over the whole grid
        t: Timestamp in seconds
        prev: Previous frame for the time derivative

    Returns:
        Safety frame

    Raises:
        ShapeMismatchError: If prev is on another grid
        ValueError: If t is not later than prev.t
    """
    h_x, h_y, h_xx, h_yy, h_xy = _derivatives(h.values, h.resolution)
    dh_dt = None
    if prev is not None:
        if not prev.h.same_grid(h):
            raise ShapeMismatchError(f"Previous frame grid {prev.h.shape} does not match {h.shape}")
        if not t > prev.t:
            raise ValueError(f"Frame time {t} must be later than the previous frame time {prev.t}")
        dh_dt = h.like((h.values - prev.h.values) / (t - prev.t))

    return SafetyFrame(
        h=h,
        gradient=VectorField(h.like(h_x), h.like(h_y)),
        hessian=(h.like(h_xx), h.like(h_yy), h.like(h_xy)),
        t=t,
        dh_dt=dh_dt,
    )


def assemble_frame(
    decomp: DomainDecomposition,
    f_free: ScalarField,
    f_obs: float | None = None,
    solver: SolverConfig | None = None,
    prev: SafetyFrame | None = None,
    t: float = 0.0,
    initial: ScalarField | None = None,
) -> SafetyFrame:
    """Solve for the safety function on the free set and inside every obstacle

    h solves lap(h) = f_free on the free set and lap(h) = f_obs inside each
    obstacle, with h = 0 on the boundary cells. Boundary cells separate the
    free set from the obstacle interiors, so both are relaxed in one solve.

    Args:
        decomp: Domain decomposition
        f_free: Forcing on the free set, negative
        f_obs: Obstacle-interior forcing, positive; defaults to |mean f_free|
        solver: Solver parameters
        prev: Previous frame, used as warm start and for dh_dt
        t: Timestamp in seconds
        initial: Warm start used when prev is None

    Returns:
        Safety frame

    Raises:
        ValueError: If f_obs is not positive or t is not later than prev.t
        ConvergenceError: If the solve does not converge
    """
    solver = solver or SolverConfig()
    if not f_free.same_grid(decomp.grid):
        raise ShapeMismatchError(f"Forcing grid {f_free.shape} does not match decomposition grid {decomp.grid.shape}")
    if prev is not None and not t > prev.t:
        raise ValueError(f"Frame time {t} must be later than the previous frame time {prev.t}")
    free = decomp.free
    if f_obs is None:
        f_obs = abs(float(f_free.values[free].mean()))
    elif not f_obs > 0:
        raise ValueError(f"Obstacle forcing must be positive, got {f_obs}")

    interior = decomp.interior
    forcing = f_free.like(np.where(free, f_free.values, np.where(interior, f_obs, 0.0)))
    if prev is not None and prev.h.same_grid(decomp.grid):
        initial = prev.h
    problem = DirichletProblem(free | interior, forcing, None, initial)
    h, stats = sor_solve(problem, omega=solver.omega, tol=solver.tol, max_iter=solver.max_iter)

    logger.debug("Assembled frame t=%.3f: %d iterations, f_obs %.4g", t, stats.iterations, f_obs)
    return frame_from_field(h, t, prev)


def _outward_weights(decomp: DomainDecomposition) -> list[tuple[int, int, np.ndarray]]:
    """Per-direction weights of free neighbours for the outward derivative on boundary cells

    Returns:
        List of (dy, dx, weight) with weights summing to 1 on every boundary cell
    """
    free = decomp.free
    raw = []
    for dy, dx in NEIGHBOURS:
        nb_free = shift(free, dy, dx, fill=False) & decomp.boundary
        # direction from the free neighbour into the boundary cell is (-dx, -dy)
        alignment = -dx * decomp.normals[..., 0] - dy * decomp.normals[..., 1]
        raw.append((dy, dx, nb_free, np.where(nb_free, np.maximum(alignment, 0.0), 0.0)))

    total = sum(w for *_, w in raw)
    count = sum(m.astype(np.float64) for _, _, m, _ in raw)
    uniform = total <= 1e-12
    weights = []
    for dy, dx, nb_free, w in raw:
        w = np.where(uniform, nb_free / np.maximum(count, 1.0), w / np.where(uniform, 1.0, total))
        weights.append((dy, dx, w))
    return weights


def outward_derivatives(frame: SafetyFrame, decomp: DomainDecomposition) -> np.ndarray:
    """One-sided derivative of h along the outward normal on boundary cells

    Each boundary cell averages (h_b - h_c) / dx over its free neighbours c,
    weighted by how well the face direction aligns with the normal.

    Returns:
        Array with the derivative on boundary cells and 0 elsewhere
    """
    h = frame.h.values
    derivative = np.zeros(h.shape)
    for dy, dx, weight in _outward_weights(decomp):
        derivative += weight * (h - shift(h, dy, dx)) / frame.h.resolution
    return np.where(decomp.boundary, derivative, 0.0)


def boundary_flux(frame: SafetyFrame, decomp: DomainDecomposition) -> float:
    """Outward flux of Dh through the free set boundary

    Sum over free/boundary faces of the one-sided normal difference times the face length.
    """
    h = frame.h.values
    free = decomp.free
    total = 0.0
    for dy, dx in NEIGHBOURS:
        across = shift(decomp.boundary, dy, dx, fill=False) & free
        total += float(np.sum((shift(h, dy, dx) - h)[across]))
    return total


def check_divergence(frame: SafetyFrame, decomp: DomainDecomposition, f_free: ScalarField) -> float:
    """Relative gap between the forcing integral and the boundary flux

    Returns:
        |sum f dA - flux| / |sum f dA|

    Raises:
        ValueError: If the forcing integral is zero
    """
    volume = float(f_free.values[decomp.free].sum()) * f_free.resolution**2
    if volume == 0:
        raise ValueError("Forcing integral over the free set is zero")
    return abs(volume - boundary_flux(frame, decomp)) / abs(volume)


@dataclass(frozen=True)
class HopfReport:
    """Sign checks of a converged frame

    Attributes:
        min_free_h: Minimum of h over the free set, positive on a valid frame
        max_obstacle_h: Maximum of h over obstacle interiors, negative on a valid frame; None without interiors
        max_boundary_outward_derivative: Maximum outward normal derivative on the boundary, negative on a valid frame
        max_obstacle_side_derivative: Maximum derivative from boundary cells into adjacent obstacle interiors,
            negative on a valid frame; None without interiors
    """

    min_free_h: float
    max_obstacle_h: float | None
    max_boundary_outward_derivative: float
    max_obstacle_side_derivative: float | None


def check_positivity_and_hopf(frame: SafetyFrame, decomp: DomainDecomposition) -> HopfReport:
    h = frame.h.values
    interior = decomp.interior

    inward = []
    for dy, dx in NEIGHBOURS:
        into_interior = shift(interior, dy, dx, fill=False) & decomp.boundary
        inward.append(((shift(h, dy, dx) - h) / frame.h.resolution)[into_interior])
    inward = np.concatenate(inward)

    return HopfReport(
        min_free_h=float(h[decomp.free].min()),
        max_obstacle_h=float(h[interior].max()) if interior.any() else None,
        max_boundary_outward_derivative=float(outward_derivatives(frame, decomp)[decomp.boundary].max()),
        max_obstacle_side_derivative=float(inward.max()) if inward.size else None,
    )


def check_boundary_flux(
    frame: SafetyFrame, decomp: DomainDecomposition, flux_spec: BoundaryFluxSpec
) -> tuple[float, float]:
    """Deviation of the outward derivative of h from the prescribed boundary flux

    Args:
        frame: Converged frame
        decomp: Domain decomposition
        flux_spec: Prescribed flux per obstacle

    Returns:
        Tuple of (mean, max) of |Dh . n - b| over boundary cells
    """
    flux_by_obstacle = np.array([0.0] + [flux_spec.flux_for(i) for i in range(1, decomp.n_obs + 1)])
    boundary = decomp.boundary
    error = np.abs(outward_derivatives(frame, decomp)[boundary] - flux_by_obstacle[decomp.obstacle_index[boundary]])
    return float(error.mean()), float(error.max())


def dirichlet_energy(h: ScalarField | np.ndarray, f_free: ScalarField, decomp: DomainDecomposition) -> float:
    """Discrete Dirichlet functional of the free-set problem

    J[h] = sum over faces touching the free set of (h_a - h_b)^2 / 2
           + sum over free cells of h * f * dx^2

    which equals sum (|Dh|^2 / 2 + h f) dx^2 with face differences for Dh. Its
    stationary point over free-cell values is the discrete Poisson solution.
    """
    values = h.values if isinstance(h, ScalarField) else np.asarray(h, dtype=np.float64)
    if values.shape != decomp.grid.shape:
        raise ShapeMismatchError(f"Field shape {values.shape} does not match grid {decomp.grid.shape}")
    free = decomp.free
    gradient_term = 0.0
    # faces counted once: right and up neighbours
    for dy, dx in ((0, 1), (1, 0)):
        touches = (free | shift(free, dy, dx, fill=False))[: values.shape[0] - dy, : values.shape[1] - dx]
        diff = (values[dy:, dx:] - values[: values.shape[0] - dy, : values.shape[1] - dx])[touches]
        gradient_term += 0.5 * float(np.sum(diff**2))
    return gradient_term + float(np.sum((values * f_free.values)[free])) * f_free.resolution**2


def check_dirichlet_energy(
    frame: SafetyFrame,
    decomp: DomainDecomposition,
    f_free: ScalarField,
    trials: int = 100,
    seed: int = 0,
    perturbations: Iterable[np.ndarray] | None = None,
) -> float:
    """Smallest energy change over perturbations that vanish off the free set

    Each perturbation phi is scaled by eps cycling through +-1e-2 and +-1e-3 times
    max h. A converged frame minimizes the functional, so every gap is at least
    about -1e-9 |J[h]|.

    Args:
        frame: Converged frame
        decomp: Domain decomposition
        f_free: Forcing the frame was solved with
        trials: Number of random perturbations, ignored when perturbations are given
        seed: Random seed
        perturbations: Explicit perturbation fields

    Returns:
        Minimum of J[h + eps phi] - J[h]
    """
    h = frame.h.values
    free = decomp.free
    scale = float(h[free].max()) if free.any() else 0.0
    base = dirichlet_energy(h, f_free, decomp)

    if perturbations is None:
        rng = np.random.default_rng(seed)
        perturbations = (rng.standard_normal(h.shape) for _ in range(trials))

    gaps = []
    for k, phi in enumerate(perturbations):
        phi = np.where(free, phi, 0.0)
        eps = ENERGY_STEPS[k % len(ENERGY_STEPS)] * scale
        gaps.append(dirichlet_energy(h + eps * phi, f_free, decomp) - base)
    return min(gaps) if gaps else 0.0


@dataclass(frozen=True)
class CheckReport:
    """Invariant checks of one converged frame

    Attributes:
        min_free_h: Minimum of h over the free set
        max_obstacle_h: Maximum of h over obstacle interiors
        max_boundary_outward_derivative: Maximum outward normal derivative on the boundary
        max_obstacle_side_derivative: Maximum derivative into obstacle interiors
        divergence_rel_error: Relative divergence-theorem gap
        mean_boundary_flux: Boundary flux divided by perimeter
        dirichlet_energy_worst_gap: Minimum energy change over perturbations
        dirichlet_energy: Energy of the solution
        iterations: Solver iterations
        residual: Solver residual
        boundary_flux_mean_error: Mean |Dh . n - b| for guidance forcing
        boundary_flux_max_error: Max |Dh . n - b| for guidance forcing
    """

    min_free_h: float
    max_obstacle_h: float | None
    max_boundary_outward_derivative: float
    max_obstacle_side_derivative: float | None
    divergence_rel_error: float
    mean_boundary_flux: float
    dirichlet_energy_worst_gap: float
    dirichlet_energy: float
    iterations: int
    residual: float
    boundary_flux_mean_error: float | None = None
    boundary_flux_max_error: float | None = None

    @property
    def passed(self) -> bool:
        """Whether every sign and tolerance check holds"""
        return (
            self.min_free_h > 0
            and (self.max_obstacle_h is None or self.max_obstacle_h < 0)
            and self.max_boundary_outward_derivative < 0
            and (self.max_obstacle_side_derivative is None or self.max_obstacle_side_derivative < 0)
            and self.divergence_rel_error <= 5e-2
            and self.dirichlet_energy_worst_gap >= -1e-9 * abs(self.dirichlet_energy)
        )


def check_frame(
    frame: SafetyFrame,
    decomp: DomainDecomposition,
    f_free: ScalarField,
    trials: int = 100,
    seed: int = 0,
    flux: BoundaryFluxSpec | None = None,
) -> CheckReport:
    """Run every invariant check on a converged frame

    Args:
        frame: Converged frame
        decomp: Domain decomposition
        f_free: Forcing the frame was solved with
        trials: Random perturbations for the energy check
        seed: Random seed for the energy check
        flux: Prescribed boundary flux, reported against when given

    Returns:
        Check report
    """
    hopf = check_positivity_and_hopf(frame, decomp)
    flux_errors = check_boundary_flux(frame, decomp, flux) if flux is not None else (None, None)
    stats = frame.stats
    return CheckReport(
        min_free_h=hopf.min_free_h,
        max_obstacle_h=hopf.max_obstacle_h,
        max_boundary_outward_derivative=hopf.max_boundary_outward_derivative,
        max_obstacle_side_derivative=hopf.max_obstacle_side_derivative,
        divergence_rel_error=check_divergence(frame, decomp, f_free),
        mean_boundary_flux=boundary_flux(frame, decomp) / decomp.perimeter,
        dirichlet_energy_worst_gap=check_dirichlet_energy(frame, decomp, f_free, trials, seed),
        dirichlet_energy=dirichlet_energy(frame.h, f_free, decomp),
        iterations=stats.iterations if stats is not None else 0,
        residual=stats.residual if stats is not None else 0.0,
        boundary_flux_mean_error=flux_errors[0],
        boundary_flux_max_error=flux_errors[1],
    )
