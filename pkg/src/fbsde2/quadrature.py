"""Gauss-Hermite rules and expectations over Brownian increments.

The rule integrates against exp(-x^2):

    int exp(-x^2) g(x) dx ~= sum_a w_a g(x_a),    sum_a w_a = sqrt(pi).

For an increment dW ~ N(0, dt) the substitution w = sqrt(2*dt)*x turns
E[payoff(dW)] into

    (1/sqrt(pi)) * sum_a w_a payoff(sqrt(2*dt)*x_a),

which is what :func:`expect_increment` evaluates.  Payoffs may return a
scalar or an array (e.g. one value per grid point, or a stack of several
fields), so a single node sweep can serve several expectations at once.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

MAX_NODES = 64

# pi to extended precision; np.pi is only double-rounded.
_PI_STR = "3.14159265358979323846264338327950288"


def _pi(dtype) -> np.floating:
    if np.dtype(dtype) == np.dtype(np.longdouble):
        return np.longdouble(_PI_STR)
    return dtype(np.pi)


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights of a Gauss-Hermite rule of order ng."""

    ng: int
    nodes: np.ndarray
    weights: np.ndarray


def _hermite_pair(n: int, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (H_n(x), H_{n-1}(x)) via the physicists' recurrence."""
    h_prev = np.ones_like(x)
    h = 2 * x
    for m in range(1, n):
        h_prev, h = h, 2 * x * h - 2 * m * h_prev
    return h, h_prev


def gauss_hermite(ng: int, dtype=np.float64) -> QuadratureRule:
    """Build the order-ng Gauss-Hermite rule.

    Nodes start from the eigenvalues of the symmetric tridiagonal Jacobi
    matrix (globally stable up to ng = 64, unlike polynomial root-finding
    from scratch) and are polished by a few Newton steps on H_ng in the
    target dtype.  Weights use the closed form

        w_i = 2**(ng-1) ng! sqrt(pi) / (ng**2 H_{ng-1}(x_i)**2),

    which keeps full relative accuracy in the far tails where squared
    eigenvector components lose theirs.
    """
    if not isinstance(ng, (int, np.integer)):
        raise TypeError(f"node count must be an integer, got {ng!r}")
    if ng < 1 or ng > MAX_NODES:
        raise ValueError(f"node count must be in [1, {MAX_NODES}], got {ng}")
    return _build_rule(int(ng), np.dtype(dtype))


@lru_cache(maxsize=None)
def _build_rule(ng: int, dtype: np.dtype) -> QuadratureRule:
    if ng == 1:
        nodes = np.zeros(1, dtype=dtype)
        weights = np.array([np.sqrt(_pi(dtype.type))], dtype=dtype)
    else:
        off = np.sqrt(np.arange(1, ng) / 2.0)
        jac = np.diag(off, -1) + np.diag(off, 1)
        nodes = np.linalg.eigvalsh(jac).astype(dtype)
        for _ in range(3):
            h, h_prev = _hermite_pair(ng, nodes)
            nodes = nodes - h / (2 * ng * h_prev)
        _, h_prev = _hermite_pair(ng, nodes)
        fact = np.prod(np.arange(1, ng, dtype=dtype))  # (ng-1)!
        weights = dtype.type(2) ** (ng - 1) * fact * np.sqrt(_pi(dtype.type)) / (
            ng * h_prev**2
        )
        # enforce exact symmetry about the origin
        nodes = (nodes - nodes[::-1]) / 2
        weights = (weights + weights[::-1]) / 2
    nodes.flags.writeable = False
    weights.flags.writeable = False
    return QuadratureRule(ng=ng, nodes=nodes, weights=weights)


def expect_increment(rule: QuadratureRule, dt: float, payoff):
    """Approximate E[payoff(dW)] for dW ~ N(0, dt).

    The payoff is evaluated once per node at sqrt(2*dt)*node; results are
    accumulated componentwise, so vector-valued payoffs are fine.  Payoff
    failures propagate with the offending node index attached.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    dtype = rule.nodes.dtype
    scale = np.sqrt(2 * np.asarray(dt, dtype=dtype))
    total = None
    for idx in range(rule.ng):
        try:
            value = payoff(scale * rule.nodes[idx])
        except Exception as err:
            note = f"[quadrature node {idx} of {rule.ng}]"
            err.args = ((f"{err.args[0]} {note}" if err.args else note),) + err.args[1:]
            raise
        term = rule.weights[idx] * np.asarray(value)
        total = term if total is None else total + term
    total = total / np.sqrt(_pi(total.dtype.type if total.dtype.kind == "f" else np.float64))
    return total if total.ndim else total[()]
