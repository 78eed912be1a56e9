"""Exception hierarchy shared by all modules.

Each exception carries the process exit code the CLI maps it to.
"""


class RolloutETCError(Exception):
    exit_code = 1


class ValidationError(RolloutETCError):
    """One or more invariants of a model or configuration are violated.

    ``violations`` holds every problem found, not just the first one.
    """

    exit_code = 2

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class ParseError(ValidationError):
    def __init__(self, message, line=None, column=None, field=None):
        self.line = line
        self.column = column
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class InfeasibleTransmission(RolloutETCError):
    """A transmission was requested without enough tokens in the bucket."""

    exit_code = 3


class OcpInfeasible(RolloutETCError):
    exit_code = 3

    def __init__(self, message, step=None):
        self.step = step
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)


class NumericalError(RolloutETCError):
    exit_code = 4


class NotControllable(NumericalError):
    pass


class NoConvergence(NumericalError):
    pass


class SingularHessian(NumericalError):
    pass


class NotConverged(NumericalError):
    """Closed-loop trace did not settle, so its cumulative cost is not an
    infinite-horizon estimate."""
