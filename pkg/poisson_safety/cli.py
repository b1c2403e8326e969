import logging
import os
import sys
from collections.abc import Sequence
from dataclasses import asdict, replace
from enum import Enum
from pathlib import Path
from typing import Annotated, Literal

import numpy as np
import tyro

from .errors import PoissonSafetyError
from .forcing import build_forcing, solve_guidance_field
from .formatters import FieldCSVFormatter, JsonFormatter, TextReportFormatter, TrajectoryCSVFormatter
from .grid import DistanceMode, buffer_obstacles, decompose_domain, distance_field, load_occupancy
from .model import (
    DEFAULT_TOL,
    Baseline,
    BoundaryFluxSpec,
    DomainDecomposition,
    ForcingConfig,
    ForcingKind,
    SolverConfig,
)
from .parsers import DEFAULT_THRESHOLD, FieldParser, ScenarioParser
from .safety import assemble_frame, check_frame
from .sim import run_scenario
from .solver import configure_threads

LOG_LEVEL_ENV = "PSAFE_LOG_LEVEL"

ForcingName = Literal["holder", "avgflux", "guidance"]
FluxOverrides = Annotated[tuple[str, ...], tyro.conf.UseAppendAction, tyro.conf.arg(metavar="I=VALUE")]


class Format(Enum):
    json = JsonFormatter
    text = TextReportFormatter


def _parse_flux_overrides(items: Sequence[str]) -> dict[int, float]:
    """Parse repeated "<obstacle>=<flux>" items

    Args:
        items: Strings such as "2=-2.0"

    Returns:
        Dict mapping obstacle index to flux

    Raises:
        ValueError: If an item is malformed
    """
    overrides = {}
    for item in items:
        index, sep, value = item.partition("=")
        try:
            if not sep:
                raise ValueError
            overrides[int(index)] = float(value)
        except ValueError as e:
            raise ValueError(f"Expected obstacle flux as <index>=<value>, got '{item}'") from e
    return overrides


def _decompose(map: Path, res: float | None, buffer: float, threshold: int) -> DomainDecomposition:
    grid = load_occupancy(map, res, threshold)
    return decompose_domain(buffer_obstacles(grid, buffer))


def _forcing_config(
    forcing: ForcingName, alpha: float, beta: float, bflux: float, bflux_obs: Sequence[str]
) -> ForcingConfig:
    return ForcingConfig(
        kind=ForcingKind(forcing),
        alpha=alpha,
        beta=beta,
        b_bar=bflux,
        flux=BoundaryFluxSpec(bflux, _parse_flux_overrides(bflux_obs)),
    )


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def solve(
    map: Path,
    res: float | None = None,
    buffer: float = 0.0,
    threshold: int = DEFAULT_THRESHOLD,
    forcing: ForcingName = "guidance",
    alpha: float = 0.1,
    beta: float = 1.0,
    bflux: float = -1.0,
    bflux_obs: FluxOverrides = (),
    tol: float = DEFAULT_TOL,
    max_iter: int | None = None,
    omega: float | None = None,
    warm: Path | None = None,
    out: Path = Path("h.csv"),
) -> None:
    """Solve for the Poisson safety function of an occupancy map.
    Writes h as field CSV and prints the solver statistics as JSON.

    Args:
        map: Occupancy map (PGM)
        res: Cell size in meters, read from the map's JSON sidecar if omitted
        buffer: Obstacle buffer radius in meters
        threshold: Gray level below which a pixel is occupied
        forcing: Forcing function construction
        alpha: Hölder exponent
        beta: Softplus sharpness
        bflux: Average flux (avgflux) or default boundary flux (guidance)
        bflux_obs: Per-obstacle boundary flux, repeatable
        tol: Solver residual tolerance
        max_iter: Solver iteration cap
        omega: SOR relaxation factor
        warm: Field CSV used as the initial guess
        out: Output field CSV
    """
    decomp = _decompose(map, res, buffer, threshold)
    solver = SolverConfig(tol, max_iter, omega)
    result = build_forcing(decomp, _forcing_config(forcing, alpha, beta, bflux, bflux_obs), solver)
    initial = FieldParser(warm).parse() if warm is not None else None
    if initial is not None and initial.shape != decomp.grid.shape:
        raise ValueError(f"Warm start field shape {initial.shape} does not match map shape {decomp.grid.shape}")

    frame = assemble_frame(decomp, result.forcing, solver=solver, initial=initial)
    _write(out, FieldCSVFormatter(frame.h).format())
    print(JsonFormatter({"out": str(out), **asdict(frame.stats)}).format())


def guidance(
    map: Path,
    res: float | None = None,
    buffer: float = 0.0,
    threshold: int = DEFAULT_THRESHOLD,
    bflux: float = -1.0,
    bflux_obs: FluxOverrides = (),
    tol: float = DEFAULT_TOL,
    max_iter: int | None = None,
    omega: float | None = None,
    out: Path = Path("."),
) -> None:
    """Solve for the harmonic guidance field of an occupancy map.
    Writes vx.csv and vy.csv into the output directory.

    Args:
        map: Occupancy map (PGM)
        res: Cell size in meters, read from the map's JSON sidecar if omitted
        buffer: Obstacle buffer radius in meters
        threshold: Gray level below which a pixel is occupied
        bflux: Default boundary flux
        bflux_obs: Per-obstacle boundary flux, repeatable
        tol: Solver residual tolerance
        max_iter: Solver iteration cap
        omega: SOR relaxation factor
        out: Output directory
    """
    decomp = _decompose(map, res, buffer, threshold)
    v = solve_guidance_field(decomp, BoundaryFluxSpec(bflux, _parse_flux_overrides(bflux_obs)), tol, max_iter, omega)
    summary = {}
    for name, component in (("vx", v.x), ("vy", v.y)):
        path = out / f"{name}.csv"
        _write(path, FieldCSVFormatter(component).format())
        summary[name] = {"out": str(path), **asdict(component.stats)} if component.stats else {"out": str(path)}
    print(JsonFormatter(summary).format())


def sdf(
    map: Path,
    res: float | None = None,
    buffer: float = 0.0,
    threshold: int = DEFAULT_THRESHOLD,
    out: Path = Path("sdf.csv"),
) -> None:
    """Compute the signed distance to the obstacle boundary of an occupancy map.

    Args:
        map: Occupancy map (PGM)
        res: Cell size in meters, read from the map's JSON sidecar if omitted
        buffer: Obstacle buffer radius in meters
        threshold: Gray level below which a pixel is occupied
        out: Output field CSV
    """
    decomp = _decompose(map, res, buffer, threshold)
    _write(out, FieldCSVFormatter(distance_field(decomp, DistanceMode.SIGNED)).format())


def simulate(
    scenario: Path,
    baseline: Literal["poisson", "sdf"] | None = None,
    out: Path = Path("."),
) -> None:
    """Simulate a scenario behind the safety filter.
    Writes one trajectory CSV per initial state and prints a JSON summary.

    Args:
        scenario: Scenario JSON
        baseline: Safety function override, Poisson solution or signed distance
        out: Output directory
    """
    sc = ScenarioParser(scenario).parse()
    if baseline is not None:
        sc = replace(sc, baseline=Baseline(baseline))

    summary = []
    for k, log in enumerate(run_scenario(sc)):
        path = out / f"trajectory_{k}.csv"
        _write(path, TrajectoryCSVFormatter(log).format())
        summary.append(
            {
                "out": str(path),
                "min_h": float(log.h.min()),
                "min_h_B": float(log.h_B.min()),
                "final_goal_distance": float(np.linalg.norm(log.positions[-1] - np.asarray(sc.goal))),
                "control_total_variation": log.control_total_variation,
                "active_steps": int(log.column("active").sum()),
            }
        )
    print(JsonFormatter(summary).format())


def check(
    map: Path,
    res: float | None = None,
    buffer: float = 0.0,
    threshold: int = DEFAULT_THRESHOLD,
    forcing: ForcingName = "guidance",
    alpha: float = 0.1,
    beta: float = 1.0,
    bflux: float = -1.0,
    bflux_obs: FluxOverrides = (),
    tol: float = DEFAULT_TOL,
    max_iter: int | None = None,
    omega: float | None = None,
    trials: int = 100,
    seed: int = 0,
    format: Format = Format.json,
) -> None:
    """Run the safety function invariant checks on an occupancy map.

    Args:
        map: Occupancy map (PGM)
        res: Cell size in meters, read from the map's JSON sidecar if omitted
        buffer: Obstacle buffer radius in meters
        threshold: Gray level below which a pixel is occupied
        forcing: Forcing function construction
        alpha: Hölder exponent
        beta: Softplus sharpness
        bflux: Average flux (avgflux) or default boundary flux (guidance)
        bflux_obs: Per-obstacle boundary flux, repeatable
        tol: Solver residual tolerance
        max_iter: Solver iteration cap
        omega: SOR relaxation factor
        trials: Random perturbations for the energy check
        seed: Random seed for the energy check
        format: Output format of the report
    """
    decomp = _decompose(map, res, buffer, threshold)
    solver = SolverConfig(tol, max_iter, omega)
    config = _forcing_config(forcing, alpha, beta, bflux, bflux_obs)
    result = build_forcing(decomp, config, solver)
    frame = assemble_frame(decomp, result.forcing, solver=solver)
    flux = config.flux if config.kind is ForcingKind.GUIDANCE else None
    report = check_frame(frame, decomp, result.forcing, trials, seed, flux)
    print(format.value(report).format())


SUBCOMMANDS = {"solve": solve, "guidance": guidance, "sdf": sdf, "simulate": simulate, "check": check}


def _configure_logging():
    name = os.environ.get(LOG_LEVEL_ENV, "WARNING").upper()
    level = logging.getLevelName(name)
    logging.basicConfig(
        level=level if isinstance(level, int) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )


def dispatch(argv: Sequence[str] | None = None) -> int:
    """Run one subcommand

    Args:
        argv: Command-line arguments without the program name, sys.argv[1:] if None

    Returns:
        Exit code: 0 on success, 1 on errors, 2 on usage errors
    """
    _configure_logging()
    try:
        configure_threads()
        tyro.extras.subcommand_cli_from_dict(SUBCOMMANDS, prog="poisson-safety", args=argv)
    except SystemExit as e:
        if e.code is None or isinstance(e.code, int):
            return e.code or 0
        return 1
    except (PoissonSafetyError, ValueError, FileNotFoundError) as e:
        print(f"poisson-safety: error: {e}", file=sys.stderr)
        return 1
    return 0


def tyro_cli():
    sys.exit(dispatch())


if __name__ == "__main__":
    tyro_cli()
