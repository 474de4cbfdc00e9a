"""Uniform space grids, sampled fields, and local Lagrange interpolation.

The grid is anchored at the run's starting point x0 with spacing
h = dt**((k+1)/(r+1)), which balances the time-stepping error of a k-step
scheme against the error of degree-r interpolation.  Grid points are
x0 + j*h for all integers j covering the requested box [lo, hi], snapped
outward so the box is fully contained.

Interpolation is local: a query x gets the ni+1 contiguous grid points
nearest to it (clamped at the box edges) and the degree-ni Lagrange
polynomial through them.  Queries slightly beyond the outermost point are
evaluated with the clamped edge stencil; beyond ``tol_cells`` grid cells
the query raises :class:`OutOfDomainError`, the signal that the box is
too small for the run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import OutOfDomainError

_SNAP = 1e-12  # offsets closer than this to a node count as exact hits


@dataclass(frozen=True)
class SpaceGrid:
    """Uniform grid x_j = x0 + j*h, j = jmin..jmax."""

    x0: float
    h: float
    lo: float
    hi: float
    jmin: int
    jmax: int
    points: np.ndarray = field(repr=False, compare=False)

    @property
    def size(self) -> int:
        return self.jmax - self.jmin + 1

    def index_of(self, x: float) -> int:
        """Index of the grid point equal to x (within h*1e-9)."""
        j = round((x - self.x0) / self.h)
        idx = j - self.jmin
        if idx < 0 or idx >= self.size or abs(self.points[idx] - x) > 1e-9 * self.h:
            raise ValueError(f"{x} is not a grid point")
        return int(idx)


def build_grid(x0: float, dt: float, k: int, r: int, lo: float, hi: float,
               dtype=np.float64) -> SpaceGrid:
    """Build the grid for one run, with h = dt**((k+1)/(r+1))."""
    if not 0 < dt < 1:
        raise ValueError(f"dt must lie in (0, 1), got {dt}")
    if r < 1:
        raise ValueError(f"balancing degree must be >= 1, got {r}")
    if not lo < hi:
        raise ValueError(f"need lo < hi, got [{lo}, {hi}]")
    dtype = np.dtype(dtype)
    h = np.asarray(dt, dtype=dtype) ** (dtype.type(k + 1) / dtype.type(r + 1))
    # nudge against roundoff so exact multiples of h stay exact endpoints
    jmin = math.floor((lo - x0) / float(h) + 1e-9)
    jmax = math.ceil((hi - x0) / float(h) - 1e-9)
    count = jmax - jmin + 1
    if count < r + 1:
        raise ValueError(
            f"box [{lo}, {hi}] with spacing h={float(h):.6g} yields {count} points; "
            f"need at least {r + 1}"
        )
    points = dtype.type(x0) + np.arange(jmin, jmax + 1, dtype=dtype) * h
    points.flags.writeable = False
    return SpaceGrid(x0=float(x0), h=float(h), lo=float(lo), hi=float(hi),
                     jmin=jmin, jmax=jmax, points=points)


@dataclass(frozen=True)
class GridFunction:
    """Values of one unknown on a grid at a single time level."""

    grid: SpaceGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.shape != (self.grid.size,):
            raise ValueError(
                f"expected {self.grid.size} values, got shape {values.shape}"
            )
        object.__setattr__(self, "values", values)

    def all_finite(self) -> bool:
        return bool(np.isfinite(self.values).all())


def sample(grid: SpaceGrid, fn, t: float) -> GridFunction:
    """Sample fn(t, x) on the grid."""
    return GridFunction(grid, np.asarray(fn(t, grid.points)))


@lru_cache(maxsize=None)
def _bary_weights(ni: int, dtype: np.dtype) -> np.ndarray:
    """Barycentric weights for equispaced nodes 0..ni: (-1)^(ni-i)/(i!(ni-i)!)."""
    fact = [math.factorial(i) for i in range(ni + 1)]
    w = np.array(
        [(-1) ** (ni - i) / (dtype.type(fact[i]) * dtype.type(fact[ni - i]))
         for i in range(ni + 1)],
        dtype=dtype,
    )
    w.flags.writeable = False
    return w


def _stencil_starts(grid: SpaceGrid, xs: np.ndarray, ni: int) -> np.ndarray:
    """Leftmost index of the ni+1 point stencil for each query (clamped).

    An even point count brackets the query's cell symmetrically; an odd
    count centers on the nearest grid node (ties resolve to the left).
    Either way every included point is at least as close to the query as
    every excluded one, up to clamping at the grid edges.
    """
    pos = (xs - grid.points[0]) / grid.h
    if ni % 2:
        base = np.floor(pos)
    else:
        base = np.ceil(pos - 0.5)
    start = base.astype(np.int32) - ni // 2
    np.clip(start, 0, grid.size - 1 - ni, out=start)
    return start


def neighbor_stencil(grid: SpaceGrid, x: float, ni: int) -> range:
    """Contiguous ni+1 grid indices nearest to x, clamped inside the grid."""
    if ni + 1 > grid.size:
        raise ValueError(f"stencil needs {ni + 1} points, grid has {grid.size}")
    start = int(_stencil_starts(grid, np.asarray([x], dtype=float), ni)[0])
    return range(start, start + ni + 1)


def _stencil_basis(grid: SpaceGrid, xs: np.ndarray, ni: int,
                   tol_cells: float) -> tuple[np.ndarray, np.ndarray]:
    """Stencil index matrix and Lagrange basis rows for a batch of queries.

    Rows whose query sits on a grid node (within the snap tolerance) get a
    one-hot basis, so nodal values are reproduced exactly.
    """
    if ni < 1:
        raise ValueError(f"interpolation degree must be >= 1, got {ni}")
    if ni + 1 > grid.size:
        raise ValueError(f"stencil needs {ni + 1} points, grid has {grid.size}")
    band = tol_cells * grid.h * (1 + 1e-12)
    x_min, x_max = float(np.min(xs)), float(np.max(xs))
    if x_min < grid.points[0] - band or x_max > grid.points[-1] + band:
        worst = x_min if grid.points[0] - x_min > x_max - grid.points[-1] else x_max
        raise OutOfDomainError(
            f"query x={worst:.6g} outside [{float(grid.points[0]):.6g}, "
            f"{float(grid.points[-1]):.6g}] by more than {tol_cells} cells "
            f"(h={grid.h:.6g}); enlarge the computational box"
        )
    start = _stencil_starts(grid, xs, ni)
    u = (xs - grid.points[start]) / grid.points.dtype.type(grid.h)
    offsets = np.arange(ni + 1, dtype=np.int32)
    index = start[:, None] + offsets[None, :]
    diffs = u[:, None] - offsets[None, :]
    weights = _bary_weights(ni, grid.points.dtype)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        basis = diffs.prod(axis=1)[:, None] * weights[None, :] / diffs
    # queries sitting on a node (to snap tolerance) get a one-hot basis row
    nearest = np.rint(u)
    hit = (np.abs(u - nearest) < _SNAP) & (nearest >= 0) & (nearest <= ni)
    if hit.any():
        rows = np.nonzero(hit)[0]
        basis[rows] = 0.0
        basis[rows, nearest[rows].astype(np.int32)] = 1.0
    return index, basis


def interpolate_fields(fields, xs: np.ndarray, ni: int,
                       tol_cells: float = 1.0) -> np.ndarray:
    """Interpolate several fields on one grid at shared query points.

    The stencil selection and Lagrange basis are computed once and applied
    to every field; returns an array of shape (len(fields), len(xs)).
    """
    grid = fields[0].grid
    for f in fields[1:]:
        if f.grid is not grid:
            raise ValueError("all fields must share one grid")
    xs = np.asarray(xs)
    values = np.stack([f.values for f in fields])
    if xs.size == 0:
        return np.zeros((len(fields), 0), dtype=values.dtype)
    index, basis = _stencil_basis(grid, xs, ni, tol_cells)
    return np.einsum("fqi,qi->fq", values[:, index], basis)


def interpolate_many(f: GridFunction, xs: np.ndarray, ni: int,
                     tol_cells: float = 1.0) -> np.ndarray:
    """Degree-ni local Lagrange interpolation of f at an array of queries.

    Values at grid points are reproduced exactly.  Queries beyond the
    outermost grid point by more than ``tol_cells * h`` raise
    :class:`OutOfDomainError`.
    """
    return interpolate_fields((f,), xs, ni, tol_cells)[0]


def interpolate(f: GridFunction, x: float, ni: int, tol_cells: float = 1.0) -> float:
    """Scalar convenience wrapper around :func:`interpolate_many`."""
    return float(interpolate_many(f, np.asarray([x], dtype=f.grid.points.dtype),
                                  ni, tol_cells)[0])
