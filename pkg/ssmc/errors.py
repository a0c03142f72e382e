# ssmc/errors.py
"""
Exception types. The CLI maps them to exit codes:
ConfigError / ModelError → 2, NumericalError → 3, InvariantError → 4.
"""


class SSMCError(Exception):
    """Base class for everything raised on purpose by this package."""


class ConfigError(SSMCError, ValueError):
    pass


class ModelError(SSMCError, ValueError):
    """Model file / schema violation. ``field`` holds the offending path."""

    def __init__(self, message: str, field: str = ""):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class NumericalError(SSMCError, RuntimeError):
    """Eigensolver, linear solve or integrator failure."""

    def __init__(self, message: str, time: float | None = None):
        self.time = time
        if time is not None:
            message = f"{message} (t={time:.6g})"
        super().__init__(message)


class InvariantError(SSMCError, AssertionError):
    pass
