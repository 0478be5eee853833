"""Exception types raised by the solver and optimizer."""


class BinghamError(Exception):
    pass


class LinearSolveBreakdown(BinghamError):
    """The inner saddle-point solve failed or produced non-finite values."""


class MaxIterationsExceeded(BinghamError):
    """Available to callers; ``solve_flow`` itself returns a report flagged as failed instead."""


class PoolFieldError(BinghamError, ValueError):
    """A test field handed to the variational-inequality residual is not admissible."""


class NoDescentFound(BinghamError):
    pass


class InnerSolverFailure(BinghamError):
    pass


class ConfigError(BinghamError, ValueError):
    """Invalid run configuration; ``line`` points into the config file when known."""

    def __init__(self, message, line=None):
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")
