"""Exception taxonomy shared across the package."""


class CarlLabError(Exception):
    """Base class for all package errors."""


class DimensionError(CarlLabError, ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ContractError(CarlLabError, ValueError):
    """An input violates a documented precondition."""


class RecordStateError(CarlLabError, RuntimeError):
    """The computation record is in the wrong state (e.g. already consumed)."""


class DivergedError(CarlLabError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, epoch: int, batch_index: int):
        super().__init__(message)
        self.epoch = epoch
        self.batch_index = batch_index


class FormatError(CarlLabError, ValueError):
    """A binary file (dataset record or checkpoint) is malformed."""


class CheckpointVersionError(FormatError):
    """Checkpoint was written by an incompatible format version."""


class ConfigError(CarlLabError, ValueError):
    """A run-configuration file is invalid.

    ``line`` is the 1-based line number of the offending entry, or None
    when the problem is not tied to a single line.
    """

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
