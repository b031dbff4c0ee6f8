"""Exception types shared across the package."""


class HtqError(Exception):
    """Base class for all package errors."""


class ConfigError(HtqError):
    """Invalid configuration or arguments (CLI exit code 1)."""


class InvariantViolation(HtqError):
    """A hard model/trace invariant failed (CLI exit code 2)."""


class NumericError(HtqError):
    """Numerical failure: grid overflow, infeasible bracket, ... (CLI exit code 3)."""


class IntegratorStall(NumericError):
    """Step size underflow in the ring integrator; carries a state snapshot."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state
