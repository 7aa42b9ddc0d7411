"""Exception hierarchy shared across the package.

The CLI maps these onto stable exit codes (see ``factormi.cli``).
"""


class FactorMIError(Exception):
    """Base class for all package errors."""


class DimensionError(FactorMIError, ValueError):
    """Array shapes are incompatible with an operation."""


class ContractError(FactorMIError):
    """A documented precondition of an operation was violated."""


class TapeError(ContractError):
    """A tensor is not reachable on the tape used for backward."""


class ConfigError(FactorMIError, ValueError):
    """Invalid configuration value; the message names the field."""


class DataError(FactorMIError):
    """Dataset content or layout problem."""


class FormatError(DataError):
    """Malformed on-disk file. ``offset`` is the byte position, if known."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericalError(FactorMIError, ArithmeticError):
    """Non-finite values where finite ones are required."""
