"""Convergence-study harness: N-sweeps, error tables and rate fits.

A sweep runs the backward solver once per step count N (rebalancing the
grid spacing each time), records the absolute errors of the four unknowns
at (t0, x0) against the problem's closed-form solution, and fits one
convergence rate per unknown as the negative least-squares slope of
ln(error) against ln(N).  Divergent runs are embedded as marked rows
rather than aborting the sweep, so unstable step counts still produce a
table.
"""

from __future__ import annotations

import io
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import SolverError
from .grid import build_grid
from .problems import ProblemSpec
from .scheme import BackwardRun, SolverConfig, TimeGrid, run_backward

DEFAULT_BOUNDS = (-20.0, 20.0)
DEFAULT_NS = (32, 64, 128, 256, 512)

CSV_HEADER = "k,N,errY,errZ,errGamma,errA,seconds"

# stencil degrees and boxes used by the reference convergence tables
BENCH_NI = {
    "ex1": {1: 5, 2: 5, 3: 5, 4: 8, 5: 14, 6: 16, 7: 20, 8: 20},
    "ex2": {1: 10, 2: 10, 3: 10, 4: 13, 5: 16, 6: 16, 7: 30},
    "ex3": {1: 5, 2: 5, 3: 5},
    "ex4": {1: 10, 2: 10, 3: 10},
    "control": {1: 8, 2: 8, 3: 8, 4: 8, 5: 12},
}
BENCH_BOUNDS = {
    ("ex4", 3): (-30.0, 30.0),
    ("control", 5): (-30.0, 30.0),
}


def bench_config(problem_name: str, k: int, **overrides) -> SolverConfig:
    """Solver configuration mirroring the reference benchmark runs."""
    ni = BENCH_NI.get(problem_name, {}).get(k, max(5, k + 2))
    return SolverConfig(k=k, ni=ni, **overrides)


def bench_bounds(problem_name: str, k: int) -> tuple[float, float]:
    return BENCH_BOUNDS.get((problem_name, k), DEFAULT_BOUNDS)


@dataclass(frozen=True)
class RunRow:
    """Errors at (t0, x0) for one step count."""

    n_steps: int
    err_y: float
    err_z: float
    err_gamma: float
    err_a: float
    iterations: int
    seconds: float
    status: str = "ok"  # ok | diverged | no-convergence | out-of-domain

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass(frozen=True)
class RunReport:
    """Sweep output: per-N error rows plus fitted convergence rates."""

    problem: str
    k: int
    rows: tuple[RunRow, ...]
    rate_y: Optional[float]
    rate_z: Optional[float]
    rate_gamma: Optional[float]
    rate_a: Optional[float]
    seconds: float
    config: SolverConfig = field(repr=False)
    bounds: tuple[float, float] = DEFAULT_BOUNDS

    def errors(self, which: str) -> list[float]:
        return [getattr(row, f"err_{which}") for row in self.rows]


def fit_rate(errors: Sequence[float], ns: Sequence[int]) -> Optional[float]:
    """Negative least-squares slope of ln(err) against ln(N).

    Returns None (undefined rate) with fewer than two finite positive
    errors; zero or non-finite entries are dropped from the fit.
    """
    if len(errors) != len(ns):
        raise ValueError("errors and ns must have equal length")
    pts = [(n, e) for n, e in zip(ns, errors) if math.isfinite(e) and e > 0]
    if len(pts) < 2:
        return None
    log_n = np.log([p[0] for p in pts])
    log_e = np.log([p[1] for p in pts])
    slope = np.polyfit(log_n, log_e, 1)[0]
    return float(-slope)


def _single_run(problem: ProblemSpec, cfg: SolverConfig, n_steps: int,
                lo: float, hi: float) -> RunRow:
    dtype = cfg.dtype
    t0, x0, horizon = problem.t0, problem.x0, problem.horizon
    tgrid = TimeGrid(t0=t0, horizon=horizon, n_steps=n_steps)
    started = time.perf_counter()
    try:
        grid = build_grid(x0, tgrid.dt, cfg.k, cfg.balancing_degree, lo, hi, dtype=dtype)
        run = run_backward(problem, cfg, grid, tgrid)
    except SolverError as err:
        status = {"DivergedError": "diverged",
                  "NonConvergenceError": "no-convergence",
                  "OutOfDomainError": "out-of-domain"}.get(type(err).__name__, "diverged")
        nan = float("nan")
        return RunRow(n_steps=n_steps, err_y=nan, err_z=nan, err_gamma=nan,
                      err_a=nan, iterations=0,
                      seconds=time.perf_counter() - started, status=status)
    xq = np.asarray([x0], dtype=dtype)
    td = dtype(t0)
    ex = problem.exact
    row = RunRow(
        n_steps=n_steps,
        err_y=float(abs(run.point.y - np.asarray(ex.y(td, xq))[0])),
        err_z=float(abs(run.point.z - np.asarray(ex.z(td, xq))[0])),
        err_gamma=float(abs(run.point.gamma - np.asarray(ex.gamma(td, xq))[0])),
        err_a=float(abs(run.point.a - np.asarray(ex.a(td, xq))[0])),
        iterations=int(sum(run.iterations)),
        seconds=time.perf_counter() - started,
    )
    return row


def sweep(problem: ProblemSpec, cfg: SolverConfig, ns: Sequence[int] = DEFAULT_NS,
          lo: float = DEFAULT_BOUNDS[0], hi: float = DEFAULT_BOUNDS[1],
          threads: int = 1) -> RunReport:
    """Run the solver once per N and assemble the error table."""
    ns = [int(n) for n in ns]
    if sorted(ns) != ns:
        raise ValueError("step counts must be sorted ascending")
    if any(n < cfg.k + 1 for n in ns):
        raise ValueError(f"every N must be >= k+1 = {cfg.k + 1}")
    started = time.perf_counter()
    if threads > 1 and len(ns) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(lambda n: _single_run(problem, cfg, n, lo, hi), ns))
    else:
        rows = [_single_run(problem, cfg, n, lo, hi) for n in ns]
    usable = [row for row in rows if row.ok]
    ns_ok = [row.n_steps for row in usable]
    report = RunReport(
        problem=problem.name, k=cfg.k, rows=tuple(rows),
        rate_y=fit_rate([r.err_y for r in usable], ns_ok),
        rate_z=fit_rate([r.err_z for r in usable], ns_ok),
        rate_gamma=fit_rate([r.err_gamma for r in usable], ns_ok),
        rate_a=fit_rate([r.err_a for r in usable], ns_ok),
        seconds=time.perf_counter() - started,
        config=cfg, bounds=(lo, hi),
    )
    return report


def _fmt(value: float) -> str:
    return "NaN" if not math.isfinite(value) else f"{value:.3e}"


def _fmt_rate(rate: Optional[float]) -> str:
    return "n/a" if rate is None else f"{rate:.2f}"


def to_csv(report: RunReport) -> str:
    """Delimited dump, one row per (k, N), locale-independent."""
    out = io.StringIO()
    out.write(CSV_HEADER + "\n")
    for row in report.rows:
        fields = [str(report.k), str(row.n_steps)]
        fields += [_fmt(v) for v in (row.err_y, row.err_z, row.err_gamma, row.err_a)]
        fields.append(f"{row.seconds:.3f}")
        out.write(",".join(fields) + "\n")
    return out.getvalue()


def to_markdown(report: RunReport) -> str:
    """Error table in the reference layout, with a CR footer row."""
    head = (f"### problem {report.problem}, k = {report.k} "
            f"(ng={report.config.ng}, ni={report.config.ni}, "
            f"box=[{report.bounds[0]:g}, {report.bounds[1]:g}], "
            f"{report.config.precision})\n\n")
    lines = [
        "| N | err Y | err Z | err Gamma | err A | status |",
        "|---:|---:|---:|---:|---:|:---|",
    ]
    for row in report.rows:
        lines.append(
            f"| {row.n_steps} | {_fmt(row.err_y)} | {_fmt(row.err_z)} | "
            f"{_fmt(row.err_gamma)} | {_fmt(row.err_a)} | {row.status} |"
        )
    lines.append(
        f"| CR | {_fmt_rate(report.rate_y)} | {_fmt_rate(report.rate_z)} | "
        f"{_fmt_rate(report.rate_gamma)} | {_fmt_rate(report.rate_a)} | "
        f"{report.seconds:.2f}s |"
    )
    return head + "\n".join(lines) + "\n"


def save_plot(report: RunReport, path) -> None:
    """Render the log-log convergence figure for one sweep to a file."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    ns = [row.n_steps for row in report.rows if row.ok]
    styles = [("y", "err Y", "o"), ("z", "err Z", "s"),
              ("gamma", "err Gamma", "^"), ("a", "err A", "v")]
    for which, label, marker in styles:
        errs = [getattr(row, f"err_{which}") for row in report.rows if row.ok]
        if any(e > 0 and math.isfinite(e) for e in errs):
            ax.loglog(ns, errs, marker=marker, label=label)
    if ns:
        anchor = max(getattr(report.rows[0], f"err_{w}") for w, _, _ in styles)
        if math.isfinite(anchor) and anchor > 0:
            ref = [anchor * (ns[0] / n) ** report.k for n in ns]
            ax.loglog(ns, ref, "k--", linewidth=0.8, label=f"slope {report.k}")
    ax.set_xlabel("N")
    ax.set_ylabel(f"absolute error at (t0, x0)")
    ax.set_title(f"{report.problem}, k = {report.k}")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
