"""Backward multistep time-stepping for second-order FBSDEs.

One backward level computes, for every grid point x, with stencil weights
alpha_j (j = 0..k) and conditional expectations E over the Euler-frozen
propagation X_j = x + b(t_n, x)*j*dt + sigma(t_n, x)*dW_j:

    Z_n     = sum_{j>=1} alpha_j E[Y_{n+j}(X_j) * dW_j]
    Gamma_n = sum_{j>=1} alpha_j E[Z_{n+j}(X_j) * dW_j]
    A_n     = alpha_0 * Z_n + sum_{j>=1} alpha_j E[Z_{n+j}(X_j)]
    -alpha_0 Y_n = sum_{j>=1} alpha_j E[Y_{n+j}(X_j)] + f(t_n, x, Y_n, Z_n, Gamma_n)

where the Y equation is implicit and solved by Picard or Newton
iteration.  The j = 0 term of A is the freshly computed Z at the point
itself, so Z must be evaluated before A.  Expectations are Gauss-Hermite
sums with dW_j realized as sqrt(2*j*dt)*node, the unique substitution
making the operator an expectation of N(0, j*dt).

The decoupled stepper runs this once per level; the coupled stepper wraps
it in an outer fixed-point loop that re-freezes b and sigma at the current
iterate until all four unknowns stop moving.  Levels are strictly
sequential, but within a level every grid point is independent and the
whole update is vectorized across points.

The first k levels below the horizon are warm-started from the problem's
closed-form solution; their A values are diagnostic only (no stencil ever
reads A history).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .coeffs import compute_coefficients, unscale
from .errors import (
    DivergedError,
    MissingExactError,
    NonConvergenceError,
    SingularDenominatorError,
    SolverError,
)
from .grid import GridFunction, SpaceGrid, interpolate_fields
from .problems import ProblemSpec
from .quadrature import gauss_hermite

PRECISIONS = {"double": np.float64, "extended": np.longdouble}

# Default iteration tolerances.  The coupled fixed point rattles at the
# roundoff floor of a whole sweep, which is machine epsilon amplified by
# the stencil weights (~ k/dt), so the double default sits well above
# eps * 512 * 8 while staying far below any benchmark error magnitude.
DEFAULT_EPSILON = {"double": 1e-10, "extended": 5e-16}

_SINGULAR = 1e-14


@dataclass(frozen=True)
class SolverConfig:
    """Run parameters of the backward solver.

    ``ni`` is the local interpolation degree, ``r`` the balancing degree
    used for the grid spacing (defaults to ``ni``).  ``domain_tol_cells``
    bounds how far (in cells) propagated points may leave the grid before
    the run aborts with :class:`OutOfDomainError`; edge queries inside the
    band use the clamped boundary stencil.
    """

    k: int
    ng: int = 10
    ni: int = 5
    r: Optional[int] = None
    epsilon0: Optional[float] = None
    max_iters: int = 200
    y_solver: str = "picard"
    precision: str = "double"
    domain_tol_cells: float = 8.0

    def __post_init__(self):
        if not 1 <= self.k <= 8:
            raise ValueError(f"step count k must be in [1, 8], got {self.k}")
        if self.ng < 2:
            raise ValueError(f"quadrature order must be >= 2, got {self.ng}")
        if self.ni < 1:
            raise ValueError(f"interpolation degree must be >= 1, got {self.ni}")
        if self.r is not None and self.r < 1:
            raise ValueError(f"balancing degree must be >= 1, got {self.r}")
        if self.epsilon0 is not None and not self.epsilon0 > 0:
            raise ValueError(f"tolerance must be positive, got {self.epsilon0}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.y_solver not in ("picard", "newton"):
            raise ValueError(f"y_solver must be 'picard' or 'newton', got {self.y_solver!r}")
        if self.precision not in PRECISIONS:
            raise ValueError(f"precision must be one of {sorted(PRECISIONS)}")

    @property
    def balancing_degree(self) -> int:
        return self.ni if self.r is None else self.r

    @property
    def dtype(self):
        return PRECISIONS[self.precision]

    @property
    def tolerance(self) -> float:
        return DEFAULT_EPSILON[self.precision] if self.epsilon0 is None else self.epsilon0


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition of [t0, horizon] into n_steps steps."""

    t0: float
    horizon: float
    n_steps: int

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")
        if not self.horizon > self.t0:
            raise ValueError(f"horizon {self.horizon} must exceed t0 {self.t0}")

    @property
    def dt(self) -> float:
        return (self.horizon - self.t0) / self.n_steps

    def t(self, n: int) -> float:
        return self.t0 + n * self.dt


@dataclass(frozen=True)
class LevelState:
    """The four unknowns on the grid at one time level."""

    n: int
    y: GridFunction
    z: GridFunction
    a: GridFunction
    gamma: GridFunction
    iterations: int = 0

    def all_finite(self) -> bool:
        return (self.y.all_finite() and self.z.all_finite()
                and self.a.all_finite() and self.gamma.all_finite())


@dataclass(frozen=True)
class PointSolution:
    """Level-0 values extracted at the run's starting point."""

    y: float
    z: float
    gamma: float
    a: float
    index: int


@dataclass(frozen=True)
class BackwardRun:
    """Full level history plus the point extraction at (t0, x0)."""

    levels: tuple[LevelState, ...]
    point: PointSolution

    @property
    def iterations(self) -> tuple[int, ...]:
        return tuple(lvl.iterations for lvl in self.levels)


def warm_start(problem: ProblemSpec, grid: SpaceGrid, tgrid: TimeGrid,
               k: int) -> list[LevelState]:
    """Fill the top k levels from the problem's closed-form solution."""
    if problem.exact is None:
        raise MissingExactError(
            f"problem {problem.name!r} has no closed-form solution to warm-start from"
        )
    ex = problem.exact
    xs = grid.points
    shape = xs.shape
    out = []
    for n in range(tgrid.n_steps - k + 1, tgrid.n_steps + 1):
        t = tgrid.t(n)
        out.append(LevelState(
            n=n,
            y=GridFunction(grid, np.broadcast_to(np.asarray(ex.y(t, xs)), shape).copy()),
            z=GridFunction(grid, np.broadcast_to(np.asarray(ex.z(t, xs)), shape).copy()),
            a=GridFunction(grid, np.broadcast_to(np.asarray(ex.a(t, xs)), shape).copy()),
            gamma=GridFunction(grid, np.broadcast_to(np.asarray(ex.gamma(t, xs)), shape).copy()),
        ))
    return out


def _check_history(history: Sequence[LevelState], k: int, grid: SpaceGrid) -> None:
    if len(history) != k:
        raise ValueError(f"history must hold {k} future levels, got {len(history)}")
    for j, lvl in enumerate(history):
        if lvl.n != history[0].n + j:
            raise ValueError("history levels must be consecutive and ascending")
        if lvl.y.grid is not grid:
            raise ValueError("history levels must live on the stepping grid")


def _level_sums(cfg: SolverConfig, grid: SpaceGrid, history: Sequence[LevelState],
                dt, alpha: np.ndarray, rule, b: np.ndarray, sig: np.ndarray) -> np.ndarray:
    """Accumulate the four alpha-weighted expectation sums over j = 1..k.

    Rows: sum alpha_j E[Y], sum alpha_j E[Y dW] (= Z), sum alpha_j E[Z],
    sum alpha_j E[Z dW] (= Gamma).  For each j all quadrature nodes are
    batched into a single interpolation call whose Lagrange basis is
    shared by the Y and Z fields; the reduction over nodes is the same
    normalized Gauss-Hermite sum that :func:`~fbsde2.quadrature.
    expect_increment` evaluates node by node.
    """
    xs = grid.points
    dtype = xs.dtype
    sums = np.zeros((4, xs.size), dtype=dtype)
    weights = rule.weights / np.sum(rule.weights)  # == w / sqrt(pi) up to roundoff
    for j in range(1, cfg.k + 1):
        level = history[j - 1]
        dws = np.sqrt(2 * (j * dt)) * rule.nodes                       # (ng,)
        xq = xs[None, :] + b[None, :] * (j * dt) + sig[None, :] * dws[:, None]
        yq, zq = interpolate_fields(
            (level.y, level.z), xq.ravel(), cfg.ni, cfg.domain_tol_cells,
        ).reshape(2, rule.ng, xs.size)
        wdw = weights * dws
        sums[0] += alpha[j] * (weights @ yq)
        sums[1] += alpha[j] * (wdw @ yq)
        sums[2] += alpha[j] * (weights @ zq)
        sums[3] += alpha[j] * (wdw @ zq)
    return sums


def _solve_y_array(cfg: SolverConfig, alpha0, rhs: np.ndarray,
                   f_eval: Callable[[np.ndarray], np.ndarray],
                   y_init: np.ndarray,
                   f_dy_eval: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                   ) -> tuple[np.ndarray, int]:
    """Vectorized implicit solve of -alpha0*y = rhs + f(y) over all points."""
    eps = cfg.tolerance
    newton = cfg.y_solver == "newton"
    if newton and f_dy_eval is None:
        raise ValueError("newton solve requires the generator's y-derivative")
    y = np.array(y_init, dtype=rhs.dtype, copy=True)
    delta = np.inf
    for it in range(1, cfg.max_iters + 1):
        try:
            if newton:
                denom = alpha0 + f_dy_eval(y)
                if np.any(np.abs(denom) < _SINGULAR):
                    raise SingularDenominatorError(
                        f"newton denominator below {_SINGULAR} (alpha0={float(alpha0):.6g})"
                    )
                y_next = y - (alpha0 * y + rhs + f_eval(y)) / denom
            else:
                y_next = -(rhs + f_eval(y)) / alpha0
        except OverflowError as err:
            raise DivergedError(f"implicit value solve overflowed: {err}") from err
        if not np.isfinite(y_next).all():
            raise DivergedError("implicit value solve produced non-finite iterates")
        delta = float(np.max(np.abs(y_next - y)))
        y = y_next
        if delta <= eps:
            return y, it
    raise NonConvergenceError(
        f"implicit value solve: no convergence after {cfg.max_iters} iterations "
        f"(last update {delta:.3e}, tolerance {eps:.3e})"
    )


def solve_y(cfg: SolverConfig, alpha0: float, rhs_known: float,
            f_of_y: Callable[[float], float], y_init: float,
            f_dy: Optional[Callable[[float], float]] = None) -> float:
    """Scalar implicit solve of -alpha0*y = rhs_known + f_of_y(y).

    Picard iterates alpha0*y_{l+1} = -rhs_known - f(y_l); Newton divides the
    residual by alpha0 + f'(y_l).  Stops when the update is <= epsilon0.
    """
    rhs = np.asarray([rhs_known], dtype=float)
    f_eval = lambda y: np.asarray([f_of_y(float(y[0]))])
    f_dy_eval = None if f_dy is None else (lambda y: np.asarray([f_dy(float(y[0]))]))
    y, _ = _solve_y_array(cfg, alpha0, rhs, f_eval, np.asarray([y_init], dtype=float),
                          f_dy_eval)
    return float(y[0])


def _require_finite(n: int, **fields) -> None:
    for name, arr in fields.items():
        if not np.isfinite(arr).all():
            raise DivergedError(f"non-finite {name} values at level n={n}")


def decoupled_step(problem: ProblemSpec, cfg: SolverConfig, grid: SpaceGrid,
                   history: Sequence[LevelState], t_n, dt) -> LevelState:
    """One backward level for a problem whose b, sigma ignore (y, z, gamma)."""
    if problem.coupled:
        raise ValueError("decoupled_step requires problem.coupled == False")
    _check_history(history, cfg.k, grid)
    alpha = unscale(compute_coefficients(cfg.k), dt, cfg.dtype)
    rule = gauss_hermite(cfg.ng, cfg.dtype)
    xs = grid.points
    n = history[0].n - 1
    zeros = np.zeros_like(xs)
    with np.errstate(over="ignore", invalid="ignore"):
        b = np.broadcast_to(np.asarray(problem.b(t_n, xs, zeros, zeros, zeros)), xs.shape)
        sig = np.broadcast_to(np.asarray(problem.sigma(t_n, xs, zeros, zeros, zeros)), xs.shape)
        sums = _level_sums(cfg, grid, history, dt, alpha, rule, b, sig)
        z_new = sums[1]
        gam_new = sums[3]
        a_new = alpha[0] * z_new + sums[2]
        _require_finite(n, z=z_new, gamma=gam_new, a=a_new)
        y_new, iters = _solve_y_array(
            cfg, alpha[0], sums[0],
            f_eval=lambda y: problem.f(t_n, xs, y, z_new, gam_new),
            y_init=history[0].y.values,
            f_dy_eval=None if problem.f_dy is None
            else (lambda y: problem.f_dy(t_n, xs, y, z_new, gam_new)),
        )
    return LevelState(n=n, y=GridFunction(grid, y_new), z=GridFunction(grid, z_new),
                      a=GridFunction(grid, a_new), gamma=GridFunction(grid, gam_new),
                      iterations=iters)


def coupled_step(problem: ProblemSpec, cfg: SolverConfig, grid: SpaceGrid,
                 history: Sequence[LevelState], t_n, dt) -> LevelState:
    """One backward level with the outer fixed-point loop over (Y, Z, Gamma).

    Each sweep re-propagates the forward points with b, sigma frozen at the
    current iterate, recomputes Z, Gamma, A, then solves Y implicitly with
    the new Z, Gamma.  Iterates start from level n+1 at the same point and
    stop once the largest of the four updates falls below epsilon0.
    """
    _check_history(history, cfg.k, grid)
    alpha = unscale(compute_coefficients(cfg.k), dt, cfg.dtype)
    rule = gauss_hermite(cfg.ng, cfg.dtype)
    xs = grid.points
    n = history[0].n - 1
    eps = cfg.tolerance
    # A's sweep-to-sweep update is the Z update amplified by alpha_0, so
    # demanding dA < eps outright would push Z below the roundoff floor;
    # the A delta is therefore tested against eps scaled by that weight.
    a_tol = eps * (1 + abs(float(alpha[0])))
    y_cur = np.array(history[0].y.values, dtype=xs.dtype, copy=True)
    z_cur = np.array(history[0].z.values, dtype=xs.dtype, copy=True)
    gam_cur = np.array(history[0].gamma.values, dtype=xs.dtype, copy=True)
    a_cur = np.array(history[0].a.values, dtype=xs.dtype, copy=True)
    with np.errstate(over="ignore", invalid="ignore"):
        for sweep in range(1, cfg.max_iters + 1):
            b = np.broadcast_to(np.asarray(problem.b(t_n, xs, y_cur, z_cur, gam_cur)), xs.shape)
            sig = np.broadcast_to(
                np.asarray(problem.sigma(t_n, xs, y_cur, z_cur, gam_cur)), xs.shape)
            sums = _level_sums(cfg, grid, history, dt, alpha, rule, b, sig)
            z_new = sums[1]
            gam_new = sums[3]
            a_new = alpha[0] * z_new + sums[2]
            _require_finite(n, z=z_new, gamma=gam_new, a=a_new)
            y_new, _ = _solve_y_array(
                cfg, alpha[0], sums[0],
                f_eval=lambda y: problem.f(t_n, xs, y, z_new, gam_new),
                y_init=y_cur,
                f_dy_eval=None if problem.f_dy is None
                else (lambda y: problem.f_dy(t_n, xs, y, z_new, gam_new)),
            )
            delta_a = float(np.max(np.abs(a_new - a_cur)))
            delta = max(
                float(np.max(np.abs(y_new - y_cur))),
                float(np.max(np.abs(z_new - z_cur))),
                float(np.max(np.abs(gam_new - gam_cur))),
            )
            y_cur, z_cur, gam_cur, a_cur = y_new, z_new, gam_new, a_new
            if delta < eps and delta_a < a_tol:
                return LevelState(
                    n=n, y=GridFunction(grid, y_cur), z=GridFunction(grid, z_cur),
                    a=GridFunction(grid, a_cur), gamma=GridFunction(grid, gam_cur),
                    iterations=sweep)
    raise NonConvergenceError(
        f"coupled fixed point: no convergence after {cfg.max_iters} sweeps "
        f"(last updates {delta:.3e} / A {delta_a:.3e}, tolerances {eps:.3e} / {a_tol:.3e})"
    )


def run_backward(problem: ProblemSpec, cfg: SolverConfig, grid: SpaceGrid,
                 tgrid: TimeGrid, use_coupled: Optional[bool] = None) -> BackwardRun:
    """March from the warm-started top levels down to n = 0.

    The stepper is chosen by the problem's coupled flag unless
    ``use_coupled`` overrides it (the coupled stepper is valid, if
    wasteful, on decoupled problems and must agree with the decoupled one
    there).  The first error aborts the run with the level attached.
    """
    if tgrid.n_steps < cfg.k + 1:
        raise ValueError(f"need at least k+1 = {cfg.k + 1} steps, got {tgrid.n_steps}")
    if cfg.y_solver == "newton" and problem.f_dy is None:
        raise ValueError(f"problem {problem.name!r} lacks f_dy; newton solve unavailable")
    coupled = problem.coupled if use_coupled is None else use_coupled
    if coupled and use_coupled is False:
        raise ValueError("cannot force the decoupled stepper on a coupled problem")
    step = coupled_step if coupled else decoupled_step
    dtype = cfg.dtype
    dt = (dtype(tgrid.horizon) - dtype(tgrid.t0)) / tgrid.n_steps
    t0 = dtype(tgrid.t0)
    levels = {state.n: state for state in warm_start(problem, grid, tgrid, cfg.k)}
    for n in range(tgrid.n_steps - cfg.k, -1, -1):
        history = [levels[n + j] for j in range(1, cfg.k + 1)]
        try:
            levels[n] = step(problem, cfg, grid, history, t0 + n * dt, dt)
        except SolverError as err:
            raise type(err)(f"level n={n} (t={float(t0 + n * dt):.6g}): {err}") from err
    idx = grid.index_of(grid.x0)
    bottom = levels[0]
    point = PointSolution(
        y=bottom.y.values[idx], z=bottom.z.values[idx],
        gamma=bottom.gamma.values[idx], a=bottom.a.values[idx], index=idx,
    )
    return BackwardRun(
        levels=tuple(levels[n] for n in range(tgrid.n_steps + 1)),
        point=point,
    )
