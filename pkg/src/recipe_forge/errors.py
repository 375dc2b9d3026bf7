"""Exception types shared across modules; the CLI maps them to exit codes."""


class ConfigError(ValueError):
    """Bad configuration or usage (exit code 1)."""


class DataError(ValueError):
    """Input data that cannot be used (exit code 2)."""


class NumericalAbort(RuntimeError):
    """Training produced a non-finite loss (exit code 3)."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace
