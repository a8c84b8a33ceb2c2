"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataFormatError and
I/O problems -> 3, NumericalError -> 4.
"""


class ModtError(Exception):
    """Base class for all package errors."""


class ShapeError(ModtError):
    """Tensor dimension mismatch; message names both offending shapes."""


class ContractViolation(ModtError):
    """An operation was called outside its stated contract."""


class LayoutError(ModtError):
    """Token layout inconsistent with the model variant."""


class ConfigError(ModtError):
    """Invalid configuration value or flag combination."""


class InvalidActionError(ModtError):
    """Non-finite action handed to the discretizer or environment."""


class NumericalError(ModtError):
    """Non-finite loss or gradient encountered during training."""


class DataFormatError(ModtError):
    """Dataset file cannot be parsed; carries the 1-based line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
