"""Exception types shared across the solver."""


class SolverError(Exception):
    """Base class for all solver-specific failures."""


class OutOfDomainError(SolverError):
    """A query point left the truncated computational box.

    Signals that the box passed to the grid builder is too small for the
    requested run rather than a programming error.
    """


class DivergedError(SolverError):
    """A backward level produced non-finite values (scheme instability)."""


class NonConvergenceError(SolverError):
    """An iteration failed to meet its tolerance within the allowed sweeps."""


class MissingExactError(SolverError):
    """An operation needed closed-form reference solutions that are absent."""


class SingularDenominatorError(SolverError):
    """Newton update denominator is numerically zero."""
