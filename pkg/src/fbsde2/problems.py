"""Benchmark problem descriptors with closed-form reference solutions.

A problem couples a forward diffusion dX = b dt + sigma dW with a backward
equation -dY = f dt - Z dW, terminal condition Y_T = g(X_T), and the
second-order pair dZ = A dt + Gamma dW.  All coefficient callables take
(t, x, y, z, gamma) and must accept numpy arrays; for decoupled problems
b and sigma simply ignore (y, z, gamma).

Reference solutions are stored as closures rather than tables because the
solver warm-starts its first k backward levels from them on the whole
grid.  Each closure set satisfies the consistency identities

    Z = sigma * dY/dx,  Gamma = sigma * dZ/dx,  A = LZ,  f = -LY,

where L is the generator d/dt + b d/dx + sigma^2/2 d^2/dx^2 evaluated
along the exact dynamics; the test-suite cross-validates every field
against finite-difference oracles built on these identities.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

Coefficient = Callable[..., np.ndarray]
Field = Callable[[float, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ExactSolution:
    """Closed-form (t, x) -> value maps for the four unknowns."""

    y: Field
    z: Field
    gamma: Field
    a: Field


@dataclass(frozen=True)
class ProblemSpec:
    """Coefficients, horizon and start of one benchmark problem."""

    name: str
    b: Coefficient
    sigma: Coefficient
    f: Coefficient
    g: Callable[[np.ndarray], np.ndarray]
    coupled: bool
    t0: float
    x0: float
    horizon: float
    f_dy: Optional[Coefficient] = None
    exact: Optional[ExactSolution] = None


def example1(c: float = 0.1, horizon: float = 1.0) -> ProblemSpec:
    """Decoupled system with trigonometric solution Y = sin(t+X).

    dX = sin(t+X) dt + c*cos(t+X) dW, and the generator divides by c,
    hence c must be nonzero.
    """
    if c == 0:
        raise ValueError("c must be nonzero (the generator divides by c)")

    def b(t, x, y=None, z=None, gam=None):
        return np.sin(t + x)

    def sigma(t, x, y=None, z=None, gam=None):
        return c * np.cos(t + x)

    def f(t, x, y, z, gam):
        cos = np.cos(t + x)
        return -cos * z / c - cos * (y**2 + y) - gam / 4

    def f_dy(t, x, y, z, gam):
        return -np.cos(t + x) * (2 * y + 1)

    def g(x):
        return np.sin(horizon + x)

    def exact_y(t, x):
        return np.sin(t + x)

    def exact_z(t, x):
        return c * np.cos(t + x) ** 2

    def exact_gamma(t, x):
        return -2 * c**2 * np.sin(t + x) * np.cos(t + x) ** 2

    def exact_a(t, x):
        tau = t + x
        return (-c * np.sin(2 * tau) * (1 + np.sin(tau))
                - c**3 * np.cos(2 * tau) * np.cos(tau) ** 2)

    return ProblemSpec(
        name="ex1", b=b, sigma=sigma, f=f, f_dy=f_dy, g=g, coupled=False,
        t0=0.0, x0=0.5, horizon=horizon,
        exact=ExactSolution(exact_y, exact_z, exact_gamma, exact_a),
    )


def example2(r: float = 0.2, c: float = 0.01, M: float = 4.0,
             horizon: float = 1.0) -> ProblemSpec:
    """Geometric Brownian forward dynamics with unbounded coefficients.

    dX = r*X dt + c*X dW and Y = t*exp(-X^2/M).
    """
    if M <= 0:
        raise ValueError(f"M must be positive, got {M}")

    def b(t, x, y=None, z=None, gam=None):
        return r * x

    def sigma(t, x, y=None, z=None, gam=None):
        return c * x

    def f(t, x, y, z, gam):
        return -np.exp(-(x**2) / M) + (2 * r / M) * x**2 * y - gam / 2 + (c / 2) * z

    def f_dy(t, x, y, z, gam):
        return (2 * r / M) * x**2 + 0 * y

    def g(x):
        return horizon * np.exp(-(x**2) / M)

    def exact_y(t, x):
        return t * np.exp(-(x**2) / M)

    def exact_z(t, x):
        return -(2 * c / M) * t * x**2 * np.exp(-(x**2) / M)

    def exact_gamma(t, x):
        return (4 * c**2 / M**2) * t * x**2 * np.exp(-(x**2) / M) * (x**2 - M)

    def exact_a(t, x):
        # generator of the Z field: Z_t + b Z_x + sigma^2/2 Z_xx in closed form
        x2 = x**2
        poly = ((1 + 2 * r * t + c**2 * t) * x2
                - ((2 * r + 5 * c**2) / M) * t * x2**2
                + (2 * c**2 / M**2) * t * x2**3)
        return -(2 * c / M) * np.exp(-x2 / M) * poly

    return ProblemSpec(
        name="ex2", b=b, sigma=sigma, f=f, f_dy=f_dy, g=g, coupled=False,
        t0=0.0, x0=1.5, horizon=horizon,
        exact=ExactSolution(exact_y, exact_z, exact_gamma, exact_a),
    )


def example3(c: float = 0.1, horizon: float = 1.0) -> ProblemSpec:
    """Coupled variant of example 1: b and sigma depend on (Y, Z).

    At the exact solution the drift collapses to sin(t+X) and the
    diffusion to c*cos(t+X), so the solution fields coincide with
    example 1's.
    """
    if c == 0:
        raise ValueError("c must be nonzero (the drift divides by c)")
    base = example1(c=c, horizon=horizon)

    def b(t, x, y, z, gam):
        s = np.sin(t + x)
        return s + z / c + s * y - 1

    def sigma(t, x, y, z, gam):
        cos = np.cos(t + x)
        return c * cos - c + c * cos**2 + c * np.sin(t + x) * y

    return ProblemSpec(
        name="ex3", b=b, sigma=sigma, f=base.f, f_dy=base.f_dy, g=base.g,
        coupled=True, t0=0.0, x0=1.0, horizon=horizon, exact=base.exact,
    )


def example4(horizon: float = 1.0) -> ProblemSpec:
    """Coupled logistic system with sigma = Y and Y in (0, 1).

    Writing E = exp(t+X), the solution is the logistic curve
    Y = E/(1+E) with Z = E^2/(1+E)^3.
    """

    def b(t, x, y, z=None, gam=None):
        return 1.0 / ((1 + np.exp(t + x)) * (1 + y))

    def sigma(t, x, y, z=None, gam=None):
        return y + 0 * x

    def f(t, x, y, z, gam):
        e = np.exp(t + x)
        return -2 * y / (1 + 2 * e) - (gam - y * z / (1 + e)) / 2

    def f_dy(t, x, y, z, gam):
        e = np.exp(t + x)
        return -2 / (1 + 2 * e) + z / (2 * (1 + e)) + 0 * y

    def g(x):
        e = np.exp(horizon + x)
        return e / (1 + e)

    def exact_y(t, x):
        e = np.exp(t + x)
        return e / (1 + e)

    def exact_z(t, x):
        e = np.exp(t + x)
        return e**2 / (1 + e) ** 3

    def exact_gamma(t, x):
        e = np.exp(t + x)
        return e**3 * (2 - e) / (1 + e) ** 5

    def exact_a(t, x):
        e = np.exp(t + x)
        return (2 * e**2 * (2 - e) / ((1 + e) ** 3 * (1 + 2 * e))
                + e**4 * (e**2 - 7 * e + 4) / (2 * (1 + e) ** 7))

    return ProblemSpec(
        name="ex4", b=b, sigma=sigma, f=f, f_dy=f_dy, g=g, coupled=True,
        t0=0.0, x0=0.5, horizon=horizon,
        exact=ExactSolution(exact_y, exact_z, exact_gamma, exact_a),
    )


PROBLEM_NAMES = ("ex1", "ex2", "ex3", "ex4", "control")


def get_problem(name: str, horizon: Optional[float] = None) -> ProblemSpec:
    """Look up a registered benchmark problem by name with default parameters.

    ``horizon`` rebuilds the problem with a different terminal time (the
    terminal condition closes over it, so a plain field override would
    leave the problem inconsistent).
    """
    kwargs = {} if horizon is None else {"horizon": horizon}
    if name == "ex1":
        return example1(**kwargs)
    if name == "ex2":
        return example2(**kwargs)
    if name == "ex3":
        return example3(**kwargs)
    if name == "ex4":
        return example4(**kwargs)
    if name == "control":
        from .control import ControlParams, build_control_problem

        return build_control_problem(ControlParams(), **kwargs)
    raise KeyError(f"unknown problem {name!r}; choose from {PROBLEM_NAMES}")
