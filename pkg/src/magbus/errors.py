"""Exception types raised by the magbus engines."""


class ConfigError(ValueError):
    """A parameter set violates a model invariant or cannot be parsed."""


class SingularSystemError(ArithmeticError):
    """A steady-state linear system has no unique solution."""


class StepSizeError(ValueError):
    """The requested integration step is too coarse for the chosen frame."""


class NumericalInstabilityError(ArithmeticError):
    """The integrated state became non-finite."""

    def __init__(self, message, time_ns=None):
        super().__init__(message)
        self.time_ns = time_ns


class FitError(RuntimeError):
    """Resonator fitting failed (degenerate input, narrow span, no convergence)."""


class TraceFormatError(ValueError):
    """A trace file could not be parsed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
