"""Command-line driver for single runs and convergence sweeps.

Examples
--------
Reproduce one error table::

    fbsde2 sweep --problem ex1 -k 3 -ng 10 -ni 5 --mg -20 20 --ns 32,64,128,256,512

Single solve at one step count, writing csv + markdown + figure::

    fbsde2 run --problem control -k 2 --ns 256 -o out/control_k2 --format both

A key=value config file can seed any flag (CLI flags win)::

    fbsde2 sweep --config sweeps/ex1_k3.cfg

The footnote flags ``-e`` and ``-sh`` are accepted for compatibility with
historical run scripts but have no effect; passing them warns.  The
environment variable ``FBSDE2_THREADS`` (or ``--threads``) lets the per-N
runs of a sweep execute concurrently.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from . import bench
from .problems import PROBLEM_NAMES, get_problem
from .scheme import PRECISIONS, SolverConfig

_CONFIG_FIELDS = (
    "problem", "k", "ng", "ni", "r", "mg", "t0", "x0", "horizon", "ns",
    "y_solver", "epsilon0", "precision", "max_iters", "output", "format",
    "plot", "strict", "threads",
)


@dataclass
class CliConfig:
    """Fully resolved command-line configuration."""

    command: str = "sweep"
    problem: str = "ex1"
    k: int = 1
    ng: int = 10
    ni: Optional[int] = None  # None -> max(5, k + 2)
    r: Optional[int] = None
    mg: tuple[float, float] = bench.DEFAULT_BOUNDS
    t0: Optional[float] = None  # None -> problem default
    x0: Optional[float] = None
    horizon: Optional[float] = None
    ns: tuple[int, ...] = bench.DEFAULT_NS
    y_solver: str = "picard"
    epsilon0: Optional[float] = None
    precision: str = "double"
    max_iters: int = 200
    output: Optional[str] = None
    format: str = "md"  # csv | md | both
    plot: bool = True
    strict: bool = False
    threads: int = 1

    def solver_config(self) -> SolverConfig:
        ni = self.ni if self.ni is not None else max(5, self.k + 2)
        return SolverConfig(
            k=self.k, ng=self.ng, ni=ni, r=self.r, epsilon0=self.epsilon0,
            max_iters=self.max_iters, y_solver=self.y_solver,
            precision=self.precision,
        )


def serialize_config(cfg: CliConfig) -> str:
    """Emit the configuration as key=value lines readable by --config."""
    lines = []
    for name in _CONFIG_FIELDS:
        value = getattr(cfg, name)
        if value is None:
            continue
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{name} = {value}")
    return "\n".join(lines) + "\n"


def _parse_ns(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in str(text).split(",") if part.strip())
    except ValueError as err:
        raise argparse.ArgumentTypeError(f"--ns expects comma-separated integers: {err}")


_CASTS = {
    "k": int, "ng": int, "ni": int, "r": int, "max_iters": int, "threads": int,
    "t0": float, "x0": float, "horizon": float, "epsilon0": float,
    "ns": _parse_ns,
    "mg": lambda s: tuple(float(v) for v in str(s).split(",")),
    "plot": lambda s: str(s).lower() in ("1", "true", "yes", "on"),
    "strict": lambda s: str(s).lower() in ("1", "true", "yes", "on"),
}


def load_config_file(path: str) -> dict:
    """Read key=value lines; '#' starts a comment."""
    values = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}: malformed line {raw!r} (expected key = value)")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _CONFIG_FIELDS:
            raise ValueError(f"{path}: unknown key {key!r}")
        values[key] = _CASTS.get(key, str)(val)
    return values


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fbsde2",
        description="Multistep backward solver and convergence benchmark for "
                    "second-order FBSDEs.",
    )
    parser.add_argument("command", nargs="?", choices=("run", "sweep"), default=None,
                        help="run: single solve at the first --ns entry; "
                             "sweep: full convergence table (default)")
    parser.add_argument("--problem", choices=PROBLEM_NAMES, default=None,
                        help="registered problem name")
    parser.add_argument("-k", type=int, default=None, help="backward step count (1..8)")
    parser.add_argument("-ng", type=int, default=None, help="Gauss-Hermite order")
    parser.add_argument("-ni", type=int, default=None,
                        help="local interpolation degree (default max(5, k+2))")
    parser.add_argument("-r", type=int, default=None,
                        help="balancing degree for the grid spacing (default ni)")
    parser.add_argument("--mg", nargs=2, type=float, metavar=("LO", "HI"), default=None,
                        help="computational box bounds")
    parser.add_argument("--t0", type=float, default=None, help="start time override")
    parser.add_argument("--x0", type=float, default=None, help="start point override")
    parser.add_argument("-T", dest="horizon", type=float, default=None,
                        help="terminal time override")
    parser.add_argument("--ns", type=_parse_ns, default=None,
                        help="comma-separated step counts, e.g. 32,64,128")
    parser.add_argument("--y-solver", dest="y_solver", choices=("picard", "newton"),
                        default=None, help="implicit solver for the value equation")
    parser.add_argument("--epsilon0", type=float, default=None,
                        help="iteration tolerance (default scales with precision)")
    parser.add_argument("--precision", choices=sorted(PRECISIONS), default=None,
                        help="floating-point precision of the run")
    parser.add_argument("--max-iters", dest="max_iters", type=int, default=None)
    parser.add_argument("--output", "-o", default=None,
                        help="output path stem; writes <stem>.csv/.md/.png")
    parser.add_argument("--format", choices=("csv", "md", "both"), default=None)
    parser.add_argument("--plot", dest="plot", action="store_true", default=None,
                        help="render the convergence figure next to the output")
    parser.add_argument("--no-plot", dest="plot", action="store_false", default=None)
    parser.add_argument("--strict", action="store_true", default=None,
                        help="exit nonzero when any row diverged or failed to converge")
    parser.add_argument("--threads", type=int, default=None,
                        help="concurrent per-N runs (default $FBSDE2_THREADS or 1)")
    parser.add_argument("--config", default=None, help="key=value config file")
    # accepted for compatibility with historical run scripts; meaning unspecified
    parser.add_argument("-e", dest="legacy_e", default=None, help=argparse.SUPPRESS)
    parser.add_argument("-sh", dest="legacy_sh", default=None, help=argparse.SUPPRESS)
    return parser


def parse_args(argv: Optional[Sequence[str]] = None) -> CliConfig:
    """Resolve defaults, config file and flags into a CliConfig."""
    parser = _build_parser()
    ns = parser.parse_args(argv)
    for flag in ("legacy_e", "legacy_sh"):
        if getattr(ns, flag) is not None:
            name = "-e" if flag == "legacy_e" else "-sh"
            warnings.warn(f"flag {name} is accepted but has no effect; ignored",
                          stacklevel=2)
    values = {}
    if ns.config is not None:
        try:
            values.update(load_config_file(ns.config))
        except (OSError, ValueError) as err:
            parser.error(str(err))
    for name in _CONFIG_FIELDS:
        given = getattr(ns, name, None)
        if given is not None:
            values[name] = tuple(given) if name == "mg" else given
    env_threads = os.environ.get("FBSDE2_THREADS")
    if "threads" not in values and env_threads:
        values["threads"] = int(env_threads)
    cfg = dataclasses.replace(CliConfig(), command=ns.command or "sweep", **values)
    if not 1 <= cfg.k <= 8:
        parser.error(f"-k must be in [1, 8], got {cfg.k}")
    if cfg.ng < 2:
        parser.error(f"-ng must be >= 2, got {cfg.ng}")
    if cfg.ni is not None and cfg.ni < 1:
        parser.error(f"-ni must be >= 1, got {cfg.ni}")
    if not cfg.ns or any(n < cfg.k + 1 for n in cfg.ns):
        parser.error(f"--ns entries must be >= k+1 = {cfg.k + 1}")
    if cfg.mg[0] >= cfg.mg[1]:
        parser.error(f"--mg needs LO < HI, got {cfg.mg}")
    if cfg.threads < 1:
        parser.error(f"--threads must be >= 1, got {cfg.threads}")
    return cfg


def _resolve_problem(cfg: CliConfig):
    problem = get_problem(cfg.problem, horizon=cfg.horizon)
    overrides = {}
    if cfg.t0 is not None:
        overrides["t0"] = cfg.t0
    if cfg.x0 is not None:
        overrides["x0"] = cfg.x0
    return dataclasses.replace(problem, **overrides) if overrides else problem


def run_main(cfg: CliConfig) -> int:
    """Execute the configured command and write any report files."""
    problem = _resolve_problem(cfg)
    solver_cfg = cfg.solver_config()
    ns = cfg.ns[:1] if cfg.command == "run" else cfg.ns
    report = bench.sweep(problem, solver_cfg, ns=ns, lo=cfg.mg[0], hi=cfg.mg[1],
                         threads=cfg.threads)
    sys.stdout.write(bench.to_markdown(report))
    if cfg.output is not None:
        stem = Path(cfg.output)
        try:
            if cfg.format in ("csv", "both"):
                stem.with_suffix(".csv").write_text(bench.to_csv(report))
            if cfg.format in ("md", "both"):
                stem.with_suffix(".md").write_text(bench.to_markdown(report))
            if cfg.plot:
                bench.save_plot(report, stem.with_suffix(".png"))
        except OSError as err:
            print(f"error: cannot write output at {stem}: {err}", file=sys.stderr)
            return 1
    if cfg.strict and any(not row.ok for row in report.rows):
        bad = [row.n_steps for row in report.rows if not row.ok]
        print(f"strict mode: rows failed at N={bad}", file=sys.stderr)
        return 1
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    return run_main(parse_args(argv))


if __name__ == "__main__":
    sys.exit(main())
