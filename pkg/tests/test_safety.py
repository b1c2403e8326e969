import numpy as np
import pytest

from conftest import arena_grid, disk_room, multi_obstacle_grid, room
from poisson_safety.errors import OutOfExtentError, ShapeMismatchError
from poisson_safety.forcing import average_flux_forcing, build_forcing, constant_forcing
from poisson_safety.grid import decompose_domain
from poisson_safety.model import BoundaryFluxSpec, ForcingConfig, ForcingKind, Sampling, ScalarField, SolverConfig
from poisson_safety.safety import (
    HopfReport,
    _outward_weights,
    assemble_frame,
    boundary_flux,
    check_boundary_flux,
    check_dirichlet_energy,
    check_divergence,
    check_frame,
    check_positivity_and_hopf,
    dirichlet_energy,
    frame_from_field,
    sample,
)

TOL = 1e-6


def avgflux_frame(grid, b_bar: float = -1.0, tol: float = TOL):
    decomp = decompose_domain(grid)
    f = constant_forcing(decomp, average_flux_forcing(decomp, b_bar))
    return decomp, f, assemble_frame(decomp, f, solver=SolverConfig(tol=tol))


@pytest.fixture(scope="module")
def room_frame():
    return avgflux_frame(room(31, 0.05))


@pytest.fixture(scope="module")
def obstacle_frame():
    return avgflux_frame(multi_obstacle_grid())


@pytest.fixture(scope="module")
def arena_frame():
    decomp = decompose_domain(arena_grid())
    solver = SolverConfig(tol=1e-5)
    result = build_forcing(decomp, ForcingConfig(kind=ForcingKind.GUIDANCE), solver)
    return decomp, result.forcing, assemble_frame(decomp, result.forcing, solver=solver)


def test_room_frame_shape(room_frame) -> None:
    """Test h is zero on the boundary, positive inside and peaks at the room centre"""
    decomp, _, frame = room_frame
    h = frame.h.values

    assert np.all(h[decomp.boundary] == 0)
    assert np.all(h[decomp.free] > 0)
    assert np.unravel_index(np.argmax(h), h.shape) == (15, 15)
    assert frame.stats is not None and frame.stats.residual <= TOL


def test_disk_frame_matches_analytic() -> None:
    """Test constant forcing c on the unit disk peaks at -c R^2 / 4"""
    grid = disk_room(1.0, 1.0 / 60)
    decomp = decompose_domain(grid)
    frame = assemble_frame(decomp, constant_forcing(decomp, -2.0), solver=SolverConfig(tol=TOL))
    centre = grid.ny // 2

    assert frame.h.values[centre, centre] == pytest.approx(0.5, rel=2e-2)
    assert sample(frame, (0.0, 0.0)).h == pytest.approx(frame.h.values[centre, centre])


def test_obstacle_interiors_negative(obstacle_frame) -> None:
    """Test h is negative inside obstacles with the default interior forcing"""
    decomp, _, frame = obstacle_frame

    assert np.all(frame.h.values[decomp.interior] < 0)


def test_assemble_frame_validation(room_frame) -> None:
    """Test invalid interior forcing, timestamps and grids are rejected"""
    decomp, f, frame = room_frame

    with pytest.raises(ValueError, match="Obstacle forcing must be positive"):
        assemble_frame(decomp, f, f_obs=-1.0)
    with pytest.raises(ValueError, match="must be later"):
        assemble_frame(decomp, f, prev=frame, t=0.0)
    with pytest.raises(ShapeMismatchError):
        assemble_frame(decomp, ScalarField(np.zeros((5, 5)), 0.05))


def test_static_map_time_derivative(room_frame) -> None:
    """Test re-solving an unchanged map gives a vanishing dh/dt"""
    decomp, f, frame = room_frame
    again = assemble_frame(decomp, f, solver=SolverConfig(tol=TOL), prev=frame, t=0.1)

    assert again.stats.warm_started
    assert np.max(np.abs(again.dh_dt.values)) <= 10 * TOL
    assert np.all(frame_from_field(frame.h, 0.1, frame).dh_dt.values == 0)


def test_frame_from_field_validation(room_frame) -> None:
    """Test the previous frame must be earlier and on the same grid"""
    _, _, frame = room_frame

    with pytest.raises(ValueError, match="must be later"):
        frame_from_field(frame.h, 0.0, frame)
    with pytest.raises(ShapeMismatchError):
        frame_from_field(ScalarField(np.zeros((5, 5)), 0.05), 1.0, frame)


def test_sample_at_cell_centres(room_frame) -> None:
    """Test sampling reproduces cell values at centres and averages at midpoints"""
    _, _, frame = room_frame
    h = frame.h.values
    res = frame.h.resolution

    probe = frame.sample((7 * res, 11 * res))
    assert probe.h == pytest.approx(h[11, 7], rel=1e-12)
    assert probe.gradient == pytest.approx([frame.gradient.x.values[11, 7], frame.gradient.y.values[11, 7]])
    assert probe.dh_dt == 0.0

    midpoint = sample(frame, (7.5 * res, 11 * res))
    assert midpoint.h == pytest.approx(0.5 * (h[11, 7] + h[11, 8]), rel=1e-12)
    np.testing.assert_allclose(probe.hessian, probe.hessian.T)


@pytest.mark.parametrize("position", [(-0.1, 0.5), (0.5, 1.6), (np.nan, 0.5)])
def test_sample_out_of_extent(room_frame, position) -> None:
    """Test positions outside the cell-centre extent are rejected"""
    _, _, frame = room_frame
    with pytest.raises(OutOfExtentError, match="outside the grid extent"):
        frame.sample(position)


def test_gradient_matches_finite_differences(obstacle_frame) -> None:
    """Test sampled gradients agree with finite differences of sampled h"""
    decomp, _, frame = obstacle_frame
    res = frame.h.resolution
    step = res / 4
    scale = np.max(np.hypot(frame.gradient.x.values, frame.gradient.y.values)[decomp.free])

    rng = np.random.default_rng(0)
    free_cells = np.argwhere(decomp.free)
    for iy, ix in free_cells[rng.choice(len(free_cells), size=30, replace=False)]:
        x, y = ix * res, iy * res
        probe = frame.sample((x, y))
        fd_x = (frame.sample((x + step, y)).h - frame.sample((x - step, y)).h) / (2 * step)
        fd_y = (frame.sample((x, y + step)).h - frame.sample((x, y - step)).h) / (2 * step)

        assert abs(probe.gradient[0] - fd_x) <= 5e-2 * scale
        assert abs(probe.gradient[1] - fd_y) <= 5e-2 * scale


def test_spline_sampling_is_self_consistent(obstacle_frame) -> None:
    """Test spline sampling reproduces nodes and returns the exact derivatives of the sampled h"""
    decomp, _, frame = obstacle_frame
    res = frame.h.resolution
    step = 1e-5 * res
    grad_scale = np.max(np.hypot(frame.gradient.x.values, frame.gradient.y.values)[decomp.free])
    hess_scale = max(np.max(np.abs(c.values[decomp.free])) for c in frame.hessian)

    def spline_h(x: float, y: float) -> float:
        return frame.sample((x, y), Sampling.SPLINE).h

    def spline_gradient(x: float, y: float) -> np.ndarray:
        return frame.sample((x, y), "spline").gradient

    rng = np.random.default_rng(1)
    free_cells = np.argwhere(decomp.free)
    for iy, ix in free_cells[rng.choice(len(free_cells), size=20, replace=False)]:
        assert spline_h(ix * res, iy * res) == pytest.approx(frame.h.values[iy, ix], rel=1e-9, abs=1e-12)

        x, y = (ix + 0.3) * res, (iy + 0.6) * res
        probe = frame.sample((x, y), Sampling.SPLINE)
        fd_gradient = [
            (spline_h(x + step, y) - spline_h(x - step, y)) / (2 * step),
            (spline_h(x, y + step) - spline_h(x, y - step)) / (2 * step),
        ]
        fd_hessian = np.column_stack(
            [
                (spline_gradient(x + step, y) - spline_gradient(x - step, y)) / (2 * step),
                (spline_gradient(x, y + step) - spline_gradient(x, y - step)) / (2 * step),
            ]
        )

        np.testing.assert_allclose(probe.gradient, fd_gradient, rtol=0, atol=1e-5 * grad_scale)
        np.testing.assert_allclose(probe.hessian, fd_hessian, rtol=0, atol=1e-4 * hess_scale)
        np.testing.assert_allclose(probe.hessian, probe.hessian.T)
        assert probe.dh_dt == 0.0


def test_divergence_theorem_constant_forcing() -> None:
    """Test the boundary flux matches the forcing integral on the disk"""
    grid = disk_room(1.0, 1.0 / 40)
    decomp = decompose_domain(grid)
    f = constant_forcing(decomp, -4.0)
    frame = assemble_frame(decomp, f, solver=SolverConfig(tol=TOL))

    assert check_divergence(frame, decomp, f) <= 5e-2
    assert boundary_flux(frame, decomp) < 0


def test_average_flux_reaches_target(obstacle_frame) -> None:
    """Test the mean boundary flux of the average-flux forcing equals b_bar"""
    decomp, _, frame = obstacle_frame

    assert boundary_flux(frame, decomp) / decomp.perimeter == pytest.approx(-1.0, abs=5e-2)


@pytest.mark.parametrize("n", [30, 60])
def test_divergence_error_bounded_by_residual(n: int) -> None:
    """Test the divergence gap stays within the residual bound at two resolutions"""
    tol = 1e-4
    decomp, f, frame = avgflux_frame(room(n, 3.0 / n, blocks=[(n // 3, n // 3, n // 2, n // 2)]), tol=tol)
    volume = abs(float(f.values[decomp.free].sum())) * f.resolution**2

    assert check_divergence(frame, decomp, f) <= tol * decomp.free_area / volume + 1e-12


@pytest.mark.parametrize("name", ["room", "obstacles", "arena"])
def test_positivity_and_hopf(name: str, room_frame, obstacle_frame, arena_frame) -> None:
    """Test the sign conditions on three maps"""
    decomp, _, frame = {"room": room_frame, "obstacles": obstacle_frame, "arena": arena_frame}[name]
    report = check_positivity_and_hopf(frame, decomp)

    assert report.min_free_h > 0
    assert report.max_obstacle_h is not None and report.max_obstacle_h < 0
    assert report.max_boundary_outward_derivative < 0
    assert report.max_obstacle_side_derivative is not None and report.max_obstacle_side_derivative < 0


def test_zero_forcing_negative_control() -> None:
    """Test zero forcing gives h = 0 everywhere and a report of zeros"""
    decomp = decompose_domain(room(20, 0.1, blocks=[(6, 6, 12, 12)]))
    frame = assemble_frame(decomp, constant_forcing(decomp, 0.0))

    assert np.all(frame.h.values == 0)
    assert frame.stats.iterations == 1
    assert check_positivity_and_hopf(frame, decomp) == HopfReport(0.0, 0.0, 0.0, 0.0)


def test_outward_weights_sum_to_one(obstacle_frame) -> None:
    """Test the outward derivative weights form an average on every boundary cell"""
    decomp, _, _ = obstacle_frame
    total = sum(w for *_, w in _outward_weights(decomp))

    np.testing.assert_allclose(total[decomp.boundary], 1.0)
    assert np.all(total[~decomp.boundary] == 0)


def test_boundary_flux_errors(arena_frame) -> None:
    """Test the guidance boundary flux report is finite and ordered"""
    decomp, _, frame = arena_frame
    mean, worst = check_boundary_flux(frame, decomp, BoundaryFluxSpec())

    assert np.isfinite(mean) and np.isfinite(worst)
    assert 0 <= mean <= worst


def test_energy_zero_perturbation(obstacle_frame) -> None:
    """Test a zero perturbation leaves the energy unchanged"""
    decomp, f, frame = obstacle_frame
    gap = check_dirichlet_energy(frame, decomp, f, perturbations=[np.zeros(frame.h.shape)])

    assert gap == 0.0


def test_energy_single_cell_bump(obstacle_frame) -> None:
    """Test a one-cell bump raises the energy by twice its squared height"""
    decomp, f, frame = obstacle_frame
    iy, ix = np.argwhere(decomp.free)[len(np.argwhere(decomp.free)) // 2]
    phi = np.zeros(frame.h.shape)
    phi[iy, ix] = 1.0
    eps = 1e-2 * frame.h.values[decomp.free].max()

    gap = check_dirichlet_energy(frame, decomp, f, perturbations=[phi])
    assert gap == pytest.approx(2 * eps**2, rel=1e-3)


def test_energy_random_perturbations(obstacle_frame) -> None:
    """Test the solution minimizes the energy against random perturbations"""
    decomp, f, frame = obstacle_frame
    energy = dirichlet_energy(frame.h, f, decomp)

    assert energy < 0
    assert check_dirichlet_energy(frame, decomp, f, trials=100, seed=1) >= -1e-9 * abs(energy)


def test_energy_shape_mismatch(obstacle_frame) -> None:
    """Test the energy rejects fields on another grid"""
    decomp, f, _ = obstacle_frame
    with pytest.raises(ShapeMismatchError):
        dirichlet_energy(np.zeros((4, 4)), f, decomp)


def test_check_frame_passes(arena_frame) -> None:
    """Test a converged guidance frame passes every check"""
    decomp, f, frame = arena_frame
    report = check_frame(frame, decomp, f, trials=20, flux=BoundaryFluxSpec())

    assert report.passed
    assert report.iterations == frame.stats.iterations
    assert report.boundary_flux_mean_error is not None
    assert report.mean_boundary_flux < 0
