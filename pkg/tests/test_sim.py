from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from conftest import arena_grid, room
from poisson_safety.errors import ScenarioError, UnsafeInitialStateError
from poisson_safety.model import (
    Baseline,
    DynamicsModel,
    FilterParams,
    ForcingConfig,
    ForcingKind,
    ObstacleMotion,
    Reference,
    Sampling,
    Scenario,
    SolverConfig,
)
from poisson_safety.sim import (
    TRAJECTORY_COLUMNS,
    FrameSchedule,
    TrajectoryLog,
    nominal_pd,
    run_initial_state,
    run_scenario,
)

UNUSED_MAP = Path("unused.pgm")
AVGFLUX = ForcingConfig(kind=ForcingKind.AVGFLUX)
ARENA_GOAL = (2.4, 2.4)


def room_scenario(**kwargs) -> Scenario:
    defaults = {
        "map_path": UNUSED_MAP,
        "initial_states": ((0.5, 0.5),),
        "goal": (1.0, 1.0),
        "forcing": AVGFLUX,
        "duration": 10.0,
    }
    return Scenario(**(defaults | kwargs))


def violation(log: TrajectoryLog, gamma: float) -> float:
    """Largest violation of the discrete CBF condition along a trajectory"""
    return max(0.0, -float(log.cbf_condition(gamma).min()))


@pytest.fixture(scope="module")
def arena_runs() -> dict[Baseline, list[TrajectoryLog]]:
    sc = Scenario(
        map_path=UNUSED_MAP,
        initial_states=((0.5, 0.5), (0.5, 2.2), (2.2, 0.5)),
        goal=ARENA_GOAL,
        model=DynamicsModel.R2,
        kp=1.0,
        kd=2.0,
        duration=30.0,
        solver=SolverConfig(tol=1e-5),
    )
    grid = arena_grid()
    return {baseline: run_scenario(replace(sc, baseline=baseline), grid) for baseline in Baseline}


def test_nominal_pd() -> None:
    """Test the nominal command for both integrators"""
    np.testing.assert_allclose(nominal_pd((1.0, 2.0), (5.0, 5.0), (0.0, 0.0), 2.0, 3.0, "r1"), (-2.0, -4.0))
    np.testing.assert_allclose(
        nominal_pd((1.0, 2.0), (1.0, 0.0), (0.0, 0.0), 2.0, 3.0, DynamicsModel.R2),
        (-5.0, -4.0),
    )
    with pytest.raises(ValueError, match="non-negative"):
        nominal_pd((0.0, 0.0), (0.0, 0.0), (1.0, 1.0), -1.0, 0.0, "r1")


def test_reference_oscillates_about_goal() -> None:
    """Test the sinusoidal goal reference"""
    reference = Reference(amplitude=(0.2, 0.0), frequency=0.5)

    np.testing.assert_allclose(reference.at((1.0, 1.0), 0.0), (1.0, 1.0))
    np.testing.assert_allclose(reference.at((1.0, 1.0), 0.5), (1.2, 1.0))
    np.testing.assert_allclose(Reference().at((1.0, 1.0), 3.0), (1.0, 1.0))


def test_trajectory_log_metrics() -> None:
    """Test total variation and the discrete CBF condition on hand-made rows"""
    rows = np.zeros((3, len(TRAJECTORY_COLUMNS)))
    rows[:, 0] = (0.0, 0.1, 0.2)
    rows[:, 5] = (0.0, 3.0, 3.0)
    rows[:, 6] = (0.0, 4.0, 4.0)
    rows[:, 7] = (1.0, 0.9, 0.85)
    log = TrajectoryLog(rows)

    assert log.control_total_variation == pytest.approx(5.0)
    np.testing.assert_allclose(log.cbf_condition(1.0), (-1.0 + 1.0, -0.5 + 0.9), atol=1e-12)
    np.testing.assert_array_equal(log.column("h"), log.h)


def test_scenario_validation() -> None:
    """Test inconsistent scenario values are rejected"""
    with pytest.raises(ScenarioError, match="Time step"):
        room_scenario(dt=0.0)
    with pytest.raises(ScenarioError, match="Resolve period"):
        room_scenario(resolve_period=0.001)
    with pytest.raises(ScenarioError, match="Initial state"):
        room_scenario(initial_states=((0.5, 0.5, 0.0),))
    with pytest.raises(ScenarioError, match="at least one"):
        room_scenario(initial_states=())
    with pytest.raises(ScenarioError, match="strictly increasing"):
        ObstacleMotion(2, (1.0, 0.5), ((0.0, 0.0), (1.0, 0.0)))


def test_static_room_converges() -> None:
    """Test a single integrator in an empty room reaches the goal safely"""
    sc = room_scenario()
    (log,) = run_scenario(sc, room(41, 0.05))

    assert log.rows.shape == (sc.steps + 1, len(TRAJECTORY_COLUMNS))
    assert np.all(np.diff(log.t) > 0)
    assert np.linalg.norm(log.positions[-1] - np.asarray(sc.goal)) <= 0.05
    assert log.h.min() >= -1e-6
    assert np.all(np.isnan(log.h_B))
    # leaving the corner only raises h, so the filter never engages
    assert not log.column("active").any()
    assert np.all(log.column("min_dist") > 0)


@pytest.mark.parametrize(
    ("start", "goal", "blocks"),
    [
        ((1.0, 1.0), (1.0, -1.0), []),
        ((1.0, 0.6), (1.0, 2.0), [(15, 25, 25, 30)]),
    ],
)
def test_cbf_condition_under_step_halving(start, goal, blocks) -> None:
    """Test the discrete CBF violation of a filtered run halves, within 1.5x, when the time step halves"""
    grid = room(41, 0.05, blocks=blocks)
    gamma = 1.0
    coarse, fine = (
        run_scenario(room_scenario(initial_states=(start,), goal=goal, dt=dt, duration=15.0), grid)[0]
        for dt in (0.02, 0.01)
    )

    assert coarse.column("active").any() and fine.column("active").any()
    assert violation(coarse, gamma) > 0
    assert violation(coarse, gamma) / 3 <= violation(fine, gamma) <= 0.75 * violation(coarse, gamma)


def test_bilinear_sampling_keeps_violation_under_step_halving() -> None:
    """Test bilinear sampling leaves a violation that does not shrink with the time step"""
    grid = room(41, 0.05)
    gamma = 1.0
    coarse, fine = (
        run_scenario(
            room_scenario(
                initial_states=((1.0, 1.0),), goal=(1.0, -1.0), dt=dt, duration=15.0, sampling=Sampling.BILINEAR
            ),
            grid,
        )[0]
        for dt in (0.02, 0.01)
    )

    assert violation(fine, gamma) > 0.75 * violation(coarse, gamma)


@pytest.mark.parametrize(
    ("start", "goal", "blocks"),
    [
        ((1.0, 1.0), (1.0, -1.0), []),
        ((1.0, 0.6), (1.0, 2.0), [(15, 25, 25, 30)]),
    ],
)
def test_single_integrator_forward_invariance(start, goal, blocks) -> None:
    """Test h stays non-negative while the nominal controller drives into an obstacle"""
    sc = room_scenario(initial_states=(start,), goal=goal, kp=1.0, duration=15.0)
    (log,) = run_scenario(sc, room(41, 0.05, blocks=blocks))

    assert log.column("active").any()
    assert log.h.min() >= -1e-6
    assert np.all(log.column("min_dist") > 0)


def test_double_integrator_reaches_goal(arena_runs) -> None:
    """Test every double integrator run stays safe and reaches the goal"""
    for log in arena_runs[Baseline.POISSON]:
        assert log.model is DynamicsModel.R2
        assert log.h.min() >= -1e-6
        assert log.h_B.min() >= -1e-6
        assert np.linalg.norm(log.positions[-1] - np.asarray(ARENA_GOAL)) <= 0.05


def test_distance_baseline_is_rougher(arena_runs) -> None:
    """Test the signed distance baseline produces a larger control variation on some run"""
    poisson = [log.control_total_variation for log in arena_runs[Baseline.POISSON]]
    sdf = [log.control_total_variation for log in arena_runs[Baseline.SDF]]

    assert any(s > p for s, p in zip(sdf, poisson, strict=True))


def test_unsafe_initial_state() -> None:
    """Test starting inside an obstacle is rejected"""
    grid = room(41, 0.05, blocks=[(15, 15, 25, 25)])
    with pytest.raises(UnsafeInitialStateError, match="h ="):
        run_scenario(room_scenario(initial_states=((1.0, 1.0),)), grid)


def test_unsafe_initial_velocity() -> None:
    """Test a double integrator rushing at the wall starts outside the backstepping safe set"""
    sc = room_scenario(initial_states=((0.1, 1.0, -5.0, 0.0),), model=DynamicsModel.R2)
    with pytest.raises(UnsafeInitialStateError, match="h_B ="):
        run_scenario(sc, room(41, 0.05))


def test_motion_of_missing_obstacle() -> None:
    """Test a motion script must refer to an obstacle of the map"""
    sc = room_scenario(motions=(ObstacleMotion(3, (0.0, 1.0), ((0.0, 0.0), (0.1, 0.0))),))
    with pytest.raises(ScenarioError, match="map has 1"):
        FrameSchedule(sc, room(20, 0.1))


def test_grid_at_translates_obstacle() -> None:
    """Test scripted offsets are rasterized by shifting the obstacle cells"""
    sc = room_scenario(motions=(ObstacleMotion(2, (0.0, 1.0), ((0.0, 0.0), (0.2, -0.1))),))
    schedule = FrameSchedule(sc, room(30, 0.05, blocks=[(10, 10, 12, 12)]))

    moved = schedule.grid_at(1.0).cells
    assert moved[8:11, 14:17].all()
    assert not moved[11:13, 10:14].any()
    np.testing.assert_array_equal(schedule.grid_at(0.0).cells, schedule.base.grid.cells)


def test_dynamic_obstacle_pushes_robot() -> None:
    """Test a robot holding position stays safe while an obstacle drives into it"""
    speed, duration = 0.25, 5.0
    sc = Scenario(
        map_path=UNUSED_MAP,
        initial_states=((1.5, 1.5),),
        goal=(1.5, 1.5),
        forcing=AVGFLUX,
        duration=duration,
        resolve_period=0.1,
        motions=(ObstacleMotion(2, (0.0, duration), ((0.0, 0.0), (duration * speed, 0.0))),),
        filter=FilterParams(use_dhdt=True),
    )
    # block spans x 0.25..0.6 and y 1.35..1.65, head-on to the robot
    grid = room(60, 0.05, blocks=[(5, 27, 12, 33)])
    schedule = FrameSchedule(sc, grid)
    log = run_initial_state(sc, schedule, sc.initial_states[0])

    assert schedule.dynamic
    assert len(schedule) == 51
    assert log.column("active").any()
    assert log.h.min() >= -1e-3
    # the block face ends at x = 1.85, so the robot must have been pushed past it
    assert log.positions[-1, 0] > 0.6 + duration * speed
    assert np.mean(schedule.iterations[1:]) < schedule.iterations[0]
    frame, _ = schedule.at(2.5)
    assert frame.dh_dt is not None
