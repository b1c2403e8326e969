from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
import numpy.typing as npt

from .errors import GridSizeError, ScenarioError, ShapeMismatchError

if TYPE_CHECKING:
    from .solver import SolveStats

__all__ = [
    "DEFAULT_TOL",
    "Base",
    "Label",
    "OccupancyGrid",
    "DomainDecomposition",
    "ScalarField",
    "VectorField",
    "ForcingKind",
    "DynamicsModel",
    "Baseline",
    "Sampling",
    "SolverConfig",
    "BoundaryFluxSpec",
    "ForcingConfig",
    "FilterParams",
    "ObstacleMotion",
    "Reference",
    "Scenario",
]

DEFAULT_TOL = 1e-4


def _frozen(array: npt.ArrayLike, dtype) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Base:
    """Base class for objects with source tracking metadata

    Attributes:
        source_file: Path to the file the object was read from, if any
    """

    _source_file: str | None = field(default=None, repr=False, compare=False, kw_only=True)


@dataclass(frozen=True, eq=False)
class OccupancyGrid(Base):
    """Raster of occupied/free cells with metric geometry

    Cells are indexed ``cells[iy, ix]``. The centre of cell (ix, iy) sits at
    ``origin + (ix, iy) * resolution`` in world coordinates. The outer ring of
    cells is always occupied so the free set is bounded.

    Attributes:
        cells: Boolean occupancy, True where occupied
        resolution: Cell size in meters
        origin: World coordinates of the centre of cell (0, 0)
    """

    cells: np.ndarray
    resolution: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        cells = np.array(self.cells, dtype=bool, copy=True)
        if cells.ndim != 2 or cells.shape[0] < 3 or cells.shape[1] < 3:
            raise GridSizeError(f"Occupancy grid must be at least 3x3, got shape {cells.shape}")
        if not self.resolution > 0:
            raise ValueError(f"Resolution must be positive, got {self.resolution}")

        cells[0, :] = cells[-1, :] = True
        cells[:, 0] = cells[:, -1] = True
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "resolution", float(self.resolution))
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def nx(self) -> int:
        return self.cells.shape[1]

    @property
    def ny(self) -> int:
        return self.cells.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.cells.shape

    def with_cells(self, cells: npt.ArrayLike) -> OccupancyGrid:
        """Copy of this grid with a new occupancy raster of the same shape"""
        cells = np.asarray(cells, dtype=bool)
        if cells.shape != self.shape:
            raise ShapeMismatchError(f"Expected cells of shape {self.shape}, got {cells.shape}")
        return OccupancyGrid(cells, self.resolution, self.origin, _source_file=self._source_file)

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """World x coordinates of the columns and y coordinates of the rows"""
        xs = self.origin[0] + self.resolution * np.arange(self.nx)
        ys = self.origin[1] + self.resolution * np.arange(self.ny)
        return xs, ys


class Label(IntEnum):
    """Per-cell role in a domain decomposition"""

    FREE = 0
    OBSTACLE = 1
    BOUNDARY = 2


@dataclass(frozen=True, eq=False)
class DomainDecomposition(Base):
    """Free set, obstacle interiors and boundary of an occupancy grid

    Attributes:
        grid: Occupancy grid after enclosed free pockets were filled
        obstacle_index: 0 on FREE cells, i in 1..n_obs on cells of obstacle i (boundary included)
        boundary: True on occupied cells 4-adjacent to a FREE cell
        normals: Outward unit normal of the free set on boundary cells, shape (ny, nx, 2) as (n_x, n_y), zero elsewhere
        n_obs: Number of 4-connected occupied components, the enclosing wall being obstacle 1
        perimeter: Length of the free/boundary interface in meters
        free_area: Area of the free set in square meters
        obstacle_areas: Area of each obstacle in square meters, index i-1 for obstacle i
    """

    grid: OccupancyGrid
    obstacle_index: np.ndarray
    boundary: np.ndarray
    normals: np.ndarray
    n_obs: int
    perimeter: float
    free_area: float
    obstacle_areas: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "obstacle_index", _frozen(self.obstacle_index, np.int64))
        object.__setattr__(self, "boundary", _frozen(self.boundary, bool))
        object.__setattr__(self, "normals", _frozen(self.normals, np.float64))

    @property
    def free(self) -> np.ndarray:
        return self.obstacle_index == 0

    @property
    def interior(self) -> np.ndarray:
        """Obstacle cells that are not boundary cells"""
        return (self.obstacle_index > 0) & ~self.boundary

    @property
    def labels(self) -> np.ndarray:
        labels = np.full(self.obstacle_index.shape, Label.OBSTACLE, dtype=np.int8)
        labels[self.free] = Label.FREE
        labels[self.boundary] = Label.BOUNDARY
        return labels

    @property
    def boundary_cells(self) -> list[tuple[int, int]]:
        """(iy, ix) index of every boundary cell in raster order"""
        return [(int(iy), int(ix)) for iy, ix in zip(*np.nonzero(self.boundary), strict=True)]


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Grid-aligned scalar samples

    Attributes:
        values: Per-cell values indexed [iy, ix]
        resolution: Cell size in meters
        origin: World coordinates of the centre of cell (0, 0)
        stats: Solver statistics, present only for solver outputs
    """

    values: np.ndarray
    resolution: float
    origin: tuple[float, float] = (0.0, 0.0)
    stats: SolveStats | None = None

    def __post_init__(self):
        values = _frozen(self.values, np.float64)
        if values.ndim != 2:
            raise ShapeMismatchError(f"Field values must be 2D, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("Field values must be finite")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "resolution", float(self.resolution))
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @classmethod
    def on_grid(cls, grid: OccupancyGrid, values: npt.ArrayLike, stats: SolveStats | None = None) -> ScalarField:
        values = np.asarray(values, dtype=np.float64)
        if values.shape != grid.shape:
            raise ShapeMismatchError(f"Expected values of shape {grid.shape}, got {values.shape}")
        return cls(values, grid.resolution, grid.origin, stats)

    @property
    def nx(self) -> int:
        return self.values.shape[1]

    @property
    def ny(self) -> int:
        return self.values.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def like(self, values: npt.ArrayLike) -> ScalarField:
        """New field on the same grid, without stats"""
        values = np.asarray(values, dtype=np.float64)
        if values.shape != self.shape:
            raise ShapeMismatchError(f"Expected values of shape {self.shape}, got {values.shape}")
        return ScalarField(values, self.resolution, self.origin)

    def same_grid(self, other: ScalarField | OccupancyGrid) -> bool:
        return (
            self.shape == other.shape
            and np.isclose(self.resolution, other.resolution)
            and np.allclose(self.origin, other.origin)
        )


@dataclass(frozen=True, eq=False)
class VectorField:
    """Grid-aligned 2-vector samples

    Attributes:
        x: x component
        y: y component
    """

    x: ScalarField
    y: ScalarField

    def __post_init__(self):
        if not self.x.same_grid(self.y):
            raise ShapeMismatchError(f"Vector components on different grids: {self.x.shape} vs {self.y.shape}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.x.shape

    def norm(self) -> np.ndarray:
        return np.hypot(self.x.values, self.y.values)


class ForcingKind(str, Enum):
    HOLDER = "holder"
    AVGFLUX = "avgflux"
    GUIDANCE = "guidance"


class DynamicsModel(str, Enum):
    """Single integrator (r1) or double integrator (r2)"""

    R1 = "r1"
    R2 = "r2"


class Baseline(str, Enum):
    POISSON = "poisson"
    SDF = "sdf"


class Sampling(str, Enum):
    """How a safety frame is evaluated between cell centres

    Bilinear interpolates h and its grid derivatives separately. Spline evaluates
    one bicubic spline of h together with its exact derivatives.
    """

    BILINEAR = "bilinear"
    SPLINE = "spline"


@dataclass(frozen=True)
class SolverConfig:
    """Parameters shared by every SOR solve

    Attributes:
        tol: Max-residual tolerance of the discrete Laplacian, scale dependent
        max_iter: Iteration cap, defaults to 50 * max(nx, ny)
        omega: Relaxation factor, defaults to the optimum for the grid size
    """

    tol: float = DEFAULT_TOL
    max_iter: int | None = None
    omega: float | None = None


@dataclass(frozen=True)
class BoundaryFluxSpec:
    """Prescribed outward flux of the guidance field on each obstacle

    Attributes:
        default: Flux applied to obstacles without an override
        overrides: Flux per obstacle index (the enclosing wall is obstacle 1)
    """

    default: float = -1.0
    overrides: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.default < 0:
            raise ValueError(f"Boundary flux must be negative, got {self.default}")
        for index, value in self.overrides.items():
            if index < 1:
                raise ValueError(f"Obstacle index must be at least 1, got {index}")
            if not value < 0:
                raise ValueError(f"Boundary flux of obstacle {index} must be negative, got {value}")
        object.__setattr__(self, "overrides", {int(k): float(v) for k, v in self.overrides.items()})

    def flux_for(self, obstacle: int) -> float:
        return self.overrides.get(obstacle, self.default)


@dataclass(frozen=True)
class ForcingConfig:
    """Forcing function selection and parameters

    Attributes:
        kind: Forcing construction
        alpha: Hölder exponent in (0, 1)
        beta: Softplus sharpness, positive
        b_bar: Desired average boundary flux, negative
        flux: Guidance field boundary flux
    """

    kind: ForcingKind = ForcingKind.GUIDANCE
    alpha: float = 0.1
    beta: float = 1.0
    b_bar: float = -1.0
    flux: BoundaryFluxSpec = field(default_factory=BoundaryFluxSpec)

    def __post_init__(self):
        object.__setattr__(self, "kind", ForcingKind(self.kind))
        if not 0 < self.alpha < 1:
            raise ValueError(f"Hölder exponent must lie in (0, 1), got {self.alpha}")
        if not self.beta > 0:
            raise ValueError(f"Softplus sharpness must be positive, got {self.beta}")
        if not self.b_bar < 0:
            raise ValueError(f"Average flux must be negative, got {self.b_bar}")


@dataclass(frozen=True)
class FilterParams:
    """Safety filter gains

    Attributes:
        gamma: Class-K slope in 1/s
        sigma: Sontag controller parameter
        mu1: Backstepping weight
        use_dhdt: Include the time derivative of h in the single integrator constraint
    """

    gamma: float = 1.0
    sigma: float = 1.0
    mu1: float = 1.0
    use_dhdt: bool = True

    def __post_init__(self):
        for name in ("gamma", "sigma", "mu1"):
            value = getattr(self, name)
            if not value > 0:
                raise ValueError(f"Filter parameter {name} must be positive, got {value}")


@dataclass(frozen=True)
class ObstacleMotion:
    """Scripted rigid translation of one obstacle

    Offsets are linearly interpolated between waypoints and held constant
    before the first and after the last waypoint.

    Attributes:
        obstacle: Obstacle index in the initial decomposition
        times: Waypoint times in seconds, strictly increasing
        offsets: Waypoint translations (dx, dy) in meters
    """

    obstacle: int
    times: tuple[float, ...]
    offsets: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if self.obstacle < 1:
            raise ScenarioError(f"Obstacle index must be at least 1, got {self.obstacle}")
        if not self.times or len(self.times) != len(self.offsets):
            raise ScenarioError(f"Obstacle {self.obstacle} needs matching, non-empty times and offsets")
        if np.any(np.diff(self.times) <= 0):
            raise ScenarioError(f"Waypoint times of obstacle {self.obstacle} must be strictly increasing")

    def offset_at(self, t: float) -> tuple[float, float]:
        offsets = np.asarray(self.offsets, dtype=np.float64)
        return (
            float(np.interp(t, self.times, offsets[:, 0])),
            float(np.interp(t, self.times, offsets[:, 1])),
        )


@dataclass(frozen=True)
class Reference:
    """Goal tracking reference goal + amplitude * sin(2 pi frequency t)

    Attributes:
        amplitude: Oscillation amplitude (ax, ay) in meters
        frequency: Oscillation frequency in Hz, 0 for a fixed goal
    """

    amplitude: tuple[float, float] = (0.0, 0.0)
    frequency: float = 0.0

    def at(self, goal: npt.ArrayLike, t: float) -> np.ndarray:
        return np.asarray(goal, dtype=np.float64) + np.asarray(self.amplitude) * np.sin(2 * np.pi * self.frequency * t)


@dataclass(frozen=True)
class Scenario(Base):
    """Simulation scenario

    Attributes:
        map_path: Occupancy map (PGM)
        resolution: Cell size in meters, read from the map sidecar if None
        buffer: Obstacle buffer radius in meters
        model: Integrator dynamics
        initial_states: Start states as (x, y) or (x, y, xdot, ydot)
        goal: Goal position in meters
        kp: Proportional gain
        kd: Derivative gain (double integrator only)
        filter: Safety filter gains
        forcing: Forcing function configuration
        solver: SOR configuration
        dt: Time step in seconds
        duration: Simulated time in seconds
        resolve_period: Seconds between re-solves while obstacles move, 0 for a static map
        baseline: Safety function, Poisson solution or signed distance
        sampling: Evaluation of the safety frame at the robot position
        motions: Scripted obstacle motions
        reference: Sinusoidal modulation of the goal
        threshold: PGM gray level below which a pixel is occupied
        origin: World coordinates of cell (0, 0), read from the sidecar if None
    """

    map_path: Path
    initial_states: tuple[tuple[float, ...], ...]
    goal: tuple[float, float]
    resolution: float | None = None
    buffer: float = 0.0
    model: DynamicsModel = DynamicsModel.R1
    kp: float = 1.0
    kd: float = 2.0
    filter: FilterParams = field(default_factory=FilterParams)
    forcing: ForcingConfig = field(default_factory=ForcingConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    dt: float = 0.01
    duration: float = 10.0
    resolve_period: float = 0.1
    baseline: Baseline = Baseline.POISSON
    sampling: Sampling = Sampling.SPLINE
    motions: tuple[ObstacleMotion, ...] = ()
    reference: Reference = field(default_factory=Reference)
    threshold: int = 128
    origin: tuple[float, float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "map_path", Path(self.map_path))
        object.__setattr__(self, "model", DynamicsModel(self.model))
        object.__setattr__(self, "baseline", Baseline(self.baseline))
        object.__setattr__(self, "sampling", Sampling(self.sampling))
        if not self.dt > 0:
            raise ScenarioError(f"Time step must be positive, got {self.dt}")
        if not self.duration > 0:
            raise ScenarioError(f"Duration must be positive, got {self.duration}")
        if self.resolve_period != 0 and self.resolve_period < self.dt:
            raise ScenarioError(f"Resolve period must be 0 or at least dt, got {self.resolve_period}")
        if self.buffer < 0:
            raise ScenarioError(f"Buffer radius must be non-negative, got {self.buffer}")
        if self.kp < 0 or self.kd < 0:
            raise ScenarioError(f"Gains must be non-negative, got kp={self.kp}, kd={self.kd}")
        if not self.initial_states:
            raise ScenarioError("Scenario needs at least one initial state")
        for state in self.initial_states:
            if len(state) not in (2, 4):
                raise ScenarioError(f"Initial state must be (x, y) or (x, y, xdot, ydot), got {state}")

    @property
    def steps(self) -> int:
        return int(round(self.duration / self.dt))
