"""Backward-difference stencil weights for d/dt at the left endpoint.

A k-step stencil on the uniform points t_i = i*dt approximates u'(t_0) by
sum_i alpha_i * u(t_i).  The scaled weights alpha_i*dt are the unique
solution of the moment system

    sum_i i**j * (alpha_i*dt) = 1  if j == 1 else 0,   j = 0..k,

which is solved here in exact rational arithmetic: the Vandermonde matrix
is badly conditioned in floating point, while the true weights are small
rationals.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np

MAX_STEPS = 8


@dataclass(frozen=True)
class MultistepCoefficients:
    """Scaled stencil weights alpha_i*dt for a k-step backward scheme."""

    k: int
    scaled: tuple[float, ...]
    ratios: tuple[Fraction, ...] = field(repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.scaled)


def _solve_rational(matrix: list[list[Fraction]], rhs: list[Fraction]) -> list[Fraction]:
    """Gaussian elimination with partial pivoting over Fractions."""
    n = len(rhs)
    a = [row[:] + [rhs[i]] for i, row in enumerate(matrix)]
    for col in range(n):
        pivot = max(range(col, n), key=lambda r: abs(a[r][col]))
        if a[pivot][col] == 0:
            raise ArithmeticError("singular moment system")
        a[col], a[pivot] = a[pivot], a[col]
        for r in range(col + 1, n):
            factor = a[r][col] / a[col][col]
            if factor == 0:
                continue
            for c in range(col, n + 1):
                a[r][c] -= factor * a[col][c]
    sol = [Fraction(0)] * n
    for r in range(n - 1, -1, -1):
        acc = a[r][n] - sum(a[r][c] * sol[c] for c in range(r + 1, n))
        sol[r] = acc / a[r][r]
    return sol


@lru_cache(maxsize=None)
def compute_coefficients(k: int) -> MultistepCoefficients:
    """Solve the (k+1)x(k+1) moment system for the scaled weights.

    Valid for 1 <= k <= 8; the stencil is known to be unstable when used
    for time stepping with k >= 7, but the weights themselves remain
    well defined.
    """
    if not isinstance(k, (int, np.integer)):
        raise TypeError(f"step count must be an integer, got {k!r}")
    if k < 1:
        raise ValueError(f"step count must be >= 1, got {k}")
    if k > MAX_STEPS:
        raise ValueError(f"step count must be <= {MAX_STEPS}, got {k}")
    n = k + 1
    matrix = [[Fraction(i**j) for i in range(n)] for j in range(n)]
    rhs = [Fraction(1 if j == 1 else 0) for j in range(n)]
    ratios = _solve_rational(matrix, rhs)
    return MultistepCoefficients(
        k=int(k),
        scaled=tuple(float(r) for r in ratios),
        ratios=tuple(ratios),
    )


def unscale(coeffs: MultistepCoefficients, dt: float, dtype=np.float64) -> np.ndarray:
    """Return the raw weights alpha_i = scaled_i / dt as an array.

    The division is done from the exact rationals so that extended-precision
    runs are not limited by double rounding of the scaled weights.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    num = np.array([r.numerator for r in coeffs.ratios], dtype=dtype)
    den = np.array([r.denominator for r in coeffs.ratios], dtype=dtype)
    return num / (den * dtype(dt))
