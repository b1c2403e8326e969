from .filters import backstep_eval, filter_r1, filter_r2, sontag_k1
from .forcing import average_flux_forcing, divergence, holder_forcing, softplus_forcing, solve_guidance_field
from .grid import buffer_obstacles, decompose_domain, distance_field, load_occupancy
from .model import (
    BoundaryFluxSpec,
    DomainDecomposition,
    FilterParams,
    ForcingConfig,
    OccupancyGrid,
    ScalarField,
    Scenario,
    SolverConfig,
    VectorField,
)
from .parsers import FieldParser, PGMParser, ScenarioParser
from .safety import SafetyFrame, assemble_frame, check_frame, sample
from .sim import nominal_pd, run_scenario
from .solver import DirichletProblem, optimal_omega, residual, sor_solve

__all__ = [
    "OccupancyGrid",
    "DomainDecomposition",
    "ScalarField",
    "VectorField",
    "SolverConfig",
    "BoundaryFluxSpec",
    "ForcingConfig",
    "FilterParams",
    "Scenario",
    "PGMParser",
    "FieldParser",
    "ScenarioParser",
    "load_occupancy",
    "buffer_obstacles",
    "decompose_domain",
    "distance_field",
    "DirichletProblem",
    "optimal_omega",
    "sor_solve",
    "residual",
    "holder_forcing",
    "average_flux_forcing",
    "solve_guidance_field",
    "divergence",
    "softplus_forcing",
    "SafetyFrame",
    "assemble_frame",
    "sample",
    "check_frame",
    "sontag_k1",
    "filter_r1",
    "backstep_eval",
    "filter_r2",
    "nominal_pd",
    "run_scenario",
]
