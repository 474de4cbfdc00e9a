"""Linear-quadratic tracking control posed as a second-order FBSDE.

The state is dX = beta*alpha dt + sigma dW with running cost
p*X^2 + q*alpha^2 and zero terminal cost.  The value function solves

    V_t + sigma^2/2 V_xx - beta^2/(4q) V_x^2 + p x^2 = 0,  V(T, x) = 0,

whose solution is quadratic, V(t, x) = a(t) x^2 + d(t), with

    a' = (beta^2/q) a^2 - p,   a(T) = 0,
    d' = -sigma^2 a,           d(T) = 0.

The constructed FBSDE drives X with the constant drift beta*c and
constant diffusion sigma and carries the nonlinearity in the generator;
its Z component equals sigma*V_x, so the optimal feedback is recovered as
alpha = -beta/(2*q*sigma) * Z.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .problems import ExactSolution, ProblemSpec


@dataclass(frozen=True)
class ControlParams:
    """Gain, noise level, cost weights and the constructed drift constant."""

    beta: float = 0.1
    sigma: float = 0.5
    p: float = 1.0
    q: float = 1.0
    c: float = 0.1

    def __post_init__(self):
        if self.q <= 0:
            raise ValueError(f"q must be positive, got {self.q}")
        if self.p <= 0:
            raise ValueError(f"p must be positive, got {self.p}")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")


def value_coefficients(params: ControlParams, horizon: float):
    """Return callables (a, d, a') of the quadratic value function.

    Closed form of the scalar Riccati problem: with kappa =
    beta*sqrt(p/q),

        a(t) = sqrt(p q)/beta * tanh(kappa (T - t)),
        d(t) = sigma^2 q / beta^2 * log cosh(kappa (T - t)),

    degenerating to a = p (T - t), d = sigma^2 p (T - t)^2 / 2 as
    beta -> 0.
    """
    beta, sigma, p, q = params.beta, params.sigma, params.p, params.q
    if abs(beta) < 1e-12:

        def a(t):
            return p * (horizon - t)

        def d(t):
            return sigma**2 * p * (horizon - t) ** 2 / 2

    else:
        kappa = beta * np.sqrt(p / q)

        def a(t):
            return np.sqrt(p * q) / beta * np.tanh(kappa * (horizon - t))

        def d(t):
            return sigma**2 * q / beta**2 * np.log(np.cosh(kappa * (horizon - t)))

    def a_prime(t):
        return (beta**2 / q) * a(t) ** 2 - p

    return a, d, a_prime


def build_control_problem(params: ControlParams = ControlParams(),
                          horizon: float = 1.0, t0: float = 0.0,
                          x0: float = 5.0) -> ProblemSpec:
    """Map the tracking problem to its FBSDE with the Riccati reference."""
    beta, sigma_c, p, q, c = params.beta, params.sigma, params.p, params.q, params.c
    a, d, a_prime = value_coefficients(params, horizon)

    def b(t, x, y=None, z=None, gam=None):
        return beta * c + 0 * x

    def sigma(t, x, y=None, z=None, gam=None):
        return sigma_c + 0 * x

    def f(t, x, y, z, gam):
        return -(beta**2 / (4 * q * sigma_c**2)) * z**2 - (beta * c / sigma_c) * z + p * x**2

    def f_dy(t, x, y, z, gam):
        return 0 * x

    def g(x):
        return 0 * x

    def exact_y(t, x):
        return a(t) * x**2 + d(t)

    def exact_z(t, x):
        return 2 * sigma_c * a(t) * x

    def exact_gamma(t, x):
        return 2 * sigma_c**2 * a(t) + 0 * x

    def exact_a(t, x):
        return 2 * sigma_c * (a_prime(t) * x + beta * c * a(t))

    return ProblemSpec(
        name="control", b=b, sigma=sigma, f=f, f_dy=f_dy, g=g, coupled=False,
        t0=t0, x0=x0, horizon=horizon,
        exact=ExactSolution(exact_y, exact_z, exact_gamma, exact_a),
    )


def recover_control(z, params: ControlParams):
    """Optimal feedback alpha = -beta/(2 q sigma) * z from the Z component."""
    return -params.beta / (2 * params.q * params.sigma) * z


def optimal_control(t: float, x, params: ControlParams, horizon: float = 1.0):
    """Reference feedback -beta/(2q) V_x = -(beta/q) a(t) x from the Riccati solution."""
    a, _, _ = value_coefficients(params, horizon)
    return -(params.beta / params.q) * a(t) * x
