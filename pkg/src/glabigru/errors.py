"""Exception hierarchy. The CLI maps each family onto an exit code."""


class GlaError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(GlaError, ValueError):
    """Bad arguments or configuration (exit code 1)."""


class DataError(GlaError, ValueError):
    """Malformed or inconsistent input data (exit code 2)."""


class ParseError(DataError):
    pass


class CheckpointError(DataError):
    pass


class NumericError(GlaError, ArithmeticError):
    """NaN/Inf, divergence, or a failed numerical diagnostic (exit code 3)."""
