"""Exception types raised across the package."""


class TriniconError(Exception):
    """Base class for all package errors."""


class SignalFormatError(TriniconError, ValueError):
    """Unreadable, malformed or incompatible audio data."""


class InfeasibleScenarioError(TriniconError, ValueError):
    """Room scenario or activity targets that cannot be realized."""


class NumericalCorruptionError(TriniconError, ArithmeticError):
    """A quantity that must be real or finite is not."""


class DivergenceError(TriniconError, RuntimeError):
    """Adaptation produced non-finite filters or cost.

    The cost values recorded up to the failure are kept in ``trace``.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []
