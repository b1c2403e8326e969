"""Scenario runner for single and double integrators behind a safety filter"""

import logging
import math
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt
from scipy.spatial import cKDTree

from .errors import InfeasibleConstraintError, ScenarioError, UnsafeInitialStateError
from .filters import FilterResult, backstep_eval, filter_r1, filter_r2
from .forcing import ForcingResult, build_forcing
from .grid import DistanceMode, buffer_obstacles, decompose_domain, distance_field, load_occupancy
from .model import Baseline, DomainDecomposition, DynamicsModel, OccupancyGrid, Scenario
from .safety import SafetyFrame, assemble_frame, frame_from_field

__all__ = [
    "TRAJECTORY_COLUMNS",
    "TrajectoryLog",
    "FrameSchedule",
    "nominal_pd",
    "load_scenario_grid",
    "run_initial_state",
    "run_scenario",
]

logger = logging.getLogger(__name__)

TRAJECTORY_COLUMNS = ("t", "x", "y", "xdot", "ydot", "u_x", "u_y", "h", "h_B", "active", "min_dist")


@dataclass(frozen=True, eq=False)
class TrajectoryLog:
    """Logged trajectory of one initial state

    Attributes:
        rows: Array of shape (steps + 1, 11) in TRAJECTORY_COLUMNS order
        model: Integrator dynamics
    """

    rows: np.ndarray
    model: DynamicsModel = DynamicsModel.R1

    def column(self, name: str) -> np.ndarray:
        return self.rows[:, TRAJECTORY_COLUMNS.index(name)]

    @property
    def t(self) -> np.ndarray:
        return self.column("t")

    @property
    def positions(self) -> np.ndarray:
        return self.rows[:, 1:3]

    @property
    def commands(self) -> np.ndarray:
        return self.rows[:, 5:7]

    @property
    def h(self) -> np.ndarray:
        return self.column("h")

    @property
    def h_B(self) -> np.ndarray:
        return self.column("h_B")

    @property
    def control_total_variation(self) -> float:
        """Sum of |u_{k+1} - u_k| over the trajectory"""
        return float(np.linalg.norm(np.diff(self.commands, axis=0), axis=1).sum())

    def cbf_condition(self, gamma: float) -> np.ndarray:
        """(h_{k+1} - h_k) / dt + gamma h_k for every logged step"""
        h = self.h
        return np.diff(h) / np.diff(self.t) + gamma * h[:-1]


def nominal_pd(
    position: npt.ArrayLike,
    velocity: npt.ArrayLike,
    goal: npt.ArrayLike,
    kp: float,
    kd: float,
    model: DynamicsModel | str,
) -> np.ndarray:
    """Nominal PD command toward a goal

    Args:
        position: Current position
        velocity: Current velocity, ignored by the single integrator
        goal: Goal position
        kp: Proportional gain
        kd: Derivative gain
        model: Integrator dynamics

    Returns:
        Velocity -kp (y - goal) for r1, acceleration -kp (y - goal) - kd ydot for r2
    """
    if kp < 0 or kd < 0:
        raise ValueError(f"Gains must be non-negative, got kp={kp}, kd={kd}")
    error = np.asarray(position, dtype=np.float64) - np.asarray(goal, dtype=np.float64)
    if DynamicsModel(model) is DynamicsModel.R1:
        return -kp * error
    return -kp * error - kd * np.asarray(velocity, dtype=np.float64)


def load_scenario_grid(sc: Scenario) -> OccupancyGrid:
    """Load and buffer the scenario map"""
    grid = load_occupancy(sc.map_path, sc.resolution, sc.threshold, sc.origin)
    return buffer_obstacles(grid, sc.buffer)


class FrameSchedule:
    """Safety frames over a scenario's time span

    A static scenario has a single frame. With scripted motions and a positive
    resolve period, frame k holds the obstacles at time k * resolve_period and is
    solved warm-started from frame k - 1, which also supplies dh/dt.

    Attributes:
        scenario: Scenario being run
        base: Decomposition of the map at time 0
        dynamic: Whether frames are re-solved over time
    """

    def __init__(self, sc: Scenario, grid: OccupancyGrid):
        self.scenario = sc
        self.base = decompose_domain(grid)
        for motion in sc.motions:
            if motion.obstacle > self.base.n_obs:
                raise ScenarioError(f"Motion refers to obstacle {motion.obstacle}, map has {self.base.n_obs}")
        self.dynamic = bool(sc.motions) and sc.resolve_period > 0
        self._frames: list[SafetyFrame] = []
        self._trees: list[cKDTree] = []
        self._forcing: ForcingResult | None = None
        self.iterations: list[int] = []

    def __len__(self) -> int:
        return len(self._frames)

    def index_at(self, t: float) -> int:
        if not self.dynamic:
            return 0
        return int(math.floor(t / self.scenario.resolve_period + 1e-9))

    def at(self, t: float) -> tuple[SafetyFrame, cKDTree]:
        """Frame in effect at time t and a search tree over the occupied cell centres"""
        k = self.index_at(t)
        while len(self._frames) <= k:
            self._advance()
        return self._frames[k], self._trees[k]

    def grid_at(self, t: float) -> OccupancyGrid:
        """Occupancy with every scripted obstacle translated to its offset at time t"""
        base = self.base
        if not self.scenario.motions:
            return base.grid
        res = base.grid.resolution
        cells = base.grid.cells.copy()
        moved = []
        for motion in self.scenario.motions:
            mask = base.obstacle_index == motion.obstacle
            cells[mask] = False
            dx, dy = motion.offset_at(t)
            moved.append((mask, int(round(dy / res)), int(round(dx / res))))

        ny, nx = cells.shape
        for mask, shift_y, shift_x in moved:
            iy, ix = np.nonzero(mask)
            iy, ix = iy + shift_y, ix + shift_x
            inside = (iy >= 0) & (iy < ny) & (ix >= 0) & (ix < nx)
            cells[iy[inside], ix[inside]] = True
        return base.grid.with_cells(cells)

    def _advance(self):
        sc = self.scenario
        k = len(self._frames)
        t = k * sc.resolve_period if self.dynamic else 0.0
        decomp = self.base if k == 0 else decompose_domain(self.grid_at(t))
        prev = self._frames[-1] if self._frames else None

        frame = self._solve(decomp, prev, t)
        occupied = np.argwhere(decomp.grid.cells)[:, ::-1] * decomp.grid.resolution + np.asarray(decomp.grid.origin)
        self._frames.append(frame)
        self._trees.append(cKDTree(occupied))
        self.iterations.append(frame.stats.iterations if frame.stats is not None else 0)
        if k > 0:
            logger.debug("Re-solved frame %d at t=%.2f in %d iterations", k, t, self.iterations[-1])

    def _solve(self, decomp: DomainDecomposition, prev: SafetyFrame | None, t: float) -> SafetyFrame:
        sc = self.scenario
        if sc.baseline is Baseline.SDF:
            return frame_from_field(distance_field(decomp, DistanceMode.SIGNED), t, prev)
        self._forcing = build_forcing(decomp, sc.forcing, sc.solver, self._forcing)
        return assemble_frame(decomp, self._forcing.forcing, None, sc.solver, prev, t)


def run_initial_state(sc: Scenario, schedule: FrameSchedule, state: tuple[float, ...]) -> TrajectoryLog:
    """Simulate one initial state with semi-implicit Euler integration

    Args:
        sc: Scenario
        schedule: Frames of the scenario
        state: (x, y) or (x, y, xdot, ydot)

    Returns:
        Trajectory log

    Raises:
        UnsafeInitialStateError: If h <= 0 at the start, or h_B <= 0 for the double integrator
        InfeasibleConstraintError: If the filter constraint becomes infeasible
    """
    position = np.array(state[:2], dtype=np.float64)
    velocity = np.array(state[2:4] if len(state) == 4 else (0.0, 0.0), dtype=np.float64)
    double = sc.model is DynamicsModel.R2

    frame, _ = schedule.at(0.0)
    probe = frame.sample(position, sc.sampling)
    if not probe.h > 0:
        raise UnsafeInitialStateError(f"Initial position {tuple(position)} has h = {probe.h:.4g} <= 0")
    if double:
        h_B = backstep_eval(probe, velocity, sc.filter).h_B
        if not h_B > 0:
            raise UnsafeInitialStateError(f"Initial state {state} has h_B = {h_B:.4g} <= 0")

    steps = sc.steps
    rows = np.empty((steps + 1, len(TRAJECTORY_COLUMNS)))
    for n in range(steps + 1):
        t = n * sc.dt
        frame, tree = schedule.at(t)
        probe = frame.sample(position, sc.sampling)
        goal = sc.reference.at(sc.goal, t)
        nominal = nominal_pd(position, velocity, goal, sc.kp, sc.kd, sc.model)
        try:
            if double:
                result: FilterResult = filter_r2(probe, velocity, nominal, sc.filter)
            else:
                result = filter_r1(probe, nominal, sc.filter)
        except InfeasibleConstraintError:
            logger.warning("Safety filter infeasible at t=%.3f, position (%.4f, %.4f)", t, *position)
            raise

        command = result.command
        if not double:
            velocity = command
        min_dist, _ = tree.query(position)
        h_B = result.h_B if result.h_B is not None else math.nan
        rows[n] = (t, *position, *velocity, *command, result.h, h_B, float(result.active), min_dist)

        if double:
            velocity = velocity + sc.dt * command
        position = position + sc.dt * velocity

    return TrajectoryLog(rows, sc.model)


def run_scenario(sc: Scenario, grid: OccupancyGrid | None = None) -> list[TrajectoryLog]:
    """Run every initial state of a scenario

    Args:
        sc: Scenario
        grid: Occupancy grid to use instead of loading and buffering the scenario map

    Returns:
        One trajectory log per initial state
    """
    schedule = FrameSchedule(sc, grid if grid is not None else load_scenario_grid(sc))
    logs = [run_initial_state(sc, schedule, state) for state in sc.initial_states]
    logger.debug("Scenario ran %d states over %d frames", len(logs), len(schedule))
    return logs
