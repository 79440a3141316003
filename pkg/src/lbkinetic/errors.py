"""Exception hierarchy shared by every module.

Each class carries the process exit code the command line maps it to.
"""


class LBError(Exception):
    """Base class for library errors."""

    exit_code = 3


class ConfigError(LBError):
    """Malformed or inconsistent configuration (exit code 2)."""

    exit_code = 2


class SchemaError(ConfigError):
    """A configuration block has an unknown, missing or mistyped key."""

    def __init__(self, key, message=None):
        self.key = key
        super().__init__(message or f"schema error at key {key!r}")


class InvariantError(ConfigError):
    """A value violates an invariant of the named domain type."""

    def __init__(self, type_name, message):
        self.type_name = type_name
        super().__init__(f"{type_name}: {message}")


class NumericalError(LBError):
    """Numerical failure (exit code 3)."""


class ConvergenceError(NumericalError):
    """An iterative or refinement procedure failed to converge."""


class OutOfRangeError(NumericalError):
    """An argument lies outside the tabulated or sampled range."""


class DegenerateArgumentError(NumericalError):
    """An argument makes the requested quantity singular."""


class DomainError(NumericalError):
    """Input outside the mathematical domain (negative density, overflow)."""


class BlowUpError(NumericalError):
    """Non-finite values appeared during time stepping."""

    def __init__(self, step, message="non-finite values in collision stage"):
        self.step = step
        super().__init__(f"step {step}: {message}")


class GuardError(NumericalError):
    """The smallness guard of the self-consistent dielectric refused the state."""


class SnapshotError(LBError):
    """Unreadable, truncated or incompatible snapshot file (exit code 4)."""

    exit_code = 4


class OutputError(LBError):
    """Failure writing an output file (exit code 4)."""

    exit_code = 4


class FitError(NumericalError):
    """A decay fit was requested on a degenerate or too short window."""
