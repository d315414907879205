"""Exception hierarchy shared across the package.

Every error raised on a user-facing path derives from QmpcError so the CLI
can map failures to exit codes without string matching.
"""


class QmpcError(Exception):
    """Base class for all package errors."""


class DimensionError(QmpcError):
    """Matrix/vector dimensions are inconsistent with the declared sizes."""


class ConfigError(QmpcError):
    """Invalid configuration, model file, or command-line arguments."""


class SolverError(QmpcError):
    """A QP/MIQP solve failed numerically (not an infeasibility verdict)."""


class InfeasibleError(QmpcError):
    """The posed problem admits no feasible point.

    Attributes
    ----------
    max_violation : float or None
        Largest constraint violation found while certifying infeasibility.
    """

    def __init__(self, message, max_violation=None):
        super().__init__(message)
        self.max_violation = max_violation


class DeadEndError(InfeasibleError):
    """A trajectory ends in a state with no feasible continuation."""


class CutDegenerateError(QmpcError):
    """Dual multipliers fail the z-coefficient stationarity test, so the
    candidate cut has value -inf and must be skipped."""


class SimulationError(QmpcError):
    """Closed-loop simulation aborted; carries the partial trace.

    Attributes
    ----------
    trace : object
        Partial simulation trace accumulated before the failure.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
