"""Multistep backward solver and benchmarks for second-order FBSDEs."""

from .coeffs import MultistepCoefficients, compute_coefficients, unscale
from .control import (
    ControlParams,
    build_control_problem,
    optimal_control,
    recover_control,
    value_coefficients,
)
from .errors import (
    DivergedError,
    MissingExactError,
    NonConvergenceError,
    OutOfDomainError,
    SingularDenominatorError,
    SolverError,
)
from .grid import (
    GridFunction,
    SpaceGrid,
    build_grid,
    interpolate,
    interpolate_many,
    neighbor_stencil,
    sample,
)
from .problems import (
    ExactSolution,
    ProblemSpec,
    example1,
    example2,
    example3,
    example4,
    get_problem,
)
from .quadrature import QuadratureRule, expect_increment, gauss_hermite
from .scheme import (
    BackwardRun,
    LevelState,
    PointSolution,
    SolverConfig,
    TimeGrid,
    coupled_step,
    decoupled_step,
    run_backward,
    solve_y,
    warm_start,
)
from .bench import RunReport, RunRow, fit_rate, sweep

__version__ = "0.1.0"

__all__ = [
    "BackwardRun",
    "ControlParams",
    "DivergedError",
    "ExactSolution",
    "GridFunction",
    "LevelState",
    "MissingExactError",
    "MultistepCoefficients",
    "NonConvergenceError",
    "OutOfDomainError",
    "PointSolution",
    "ProblemSpec",
    "QuadratureRule",
    "RunReport",
    "RunRow",
    "SingularDenominatorError",
    "SolverConfig",
    "SolverError",
    "SpaceGrid",
    "TimeGrid",
    "build_control_problem",
    "build_grid",
    "compute_coefficients",
    "coupled_step",
    "decoupled_step",
    "example1",
    "example2",
    "example3",
    "example4",
    "expect_increment",
    "fit_rate",
    "gauss_hermite",
    "get_problem",
    "interpolate",
    "interpolate_many",
    "neighbor_stencil",
    "optimal_control",
    "recover_control",
    "run_backward",
    "sample",
    "solve_y",
    "sweep",
    "unscale",
    "value_coefficients",
    "warm_start",
]
