"""Exception hierarchy shared across the package.

Each error class carries the process exit code used by the CLI/service
layer, so stage failures map onto stable, scriptable codes.
"""


class NnspinError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class InvalidInputError(NnspinError):
    """An argument violates a documented precondition."""

    exit_code = 2


class ConfigError(NnspinError):
    """Run configuration is malformed or inconsistent."""

    exit_code = 2


class ConvergenceError(NnspinError):
    """An iterative optimizer exhausted its budget before reaching its target."""

    exit_code = 3

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class IntegrationError(NnspinError):
    """A master-equation integration step could not be completed."""

    exit_code = 4


class FitFailureError(NnspinError):
    """The spectral likelihood fit failed to converge."""

    exit_code = 5

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class DependencyError(NnspinError):
    """A pipeline stage was invoked before the stages it depends on."""

    exit_code = 6


class SingularityError(InvalidInputError):
    """Evaluation requested at a singular point (e.g. r = 0)."""


class NumericalFailureError(NnspinError):
    """A linear-algebra kernel hit a singular or rank-deficient system."""

    exit_code = 1


class ConsistencyError(NnspinError):
    """An internal cross-check between two computation paths disagreed."""

    exit_code = 1
