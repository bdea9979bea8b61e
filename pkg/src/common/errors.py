"""Error hierarchy shared by every pipeline layer.

Each class carries the exit code the command line maps it to:
0 success, 1 usage, 2 missing/invalid input, 3 runtime failure.
"""


class MisMeError(Exception):
    exit_code = 3


class UsageError(MisMeError):
    exit_code = 1


class InputError(MisMeError):
    """Missing or malformed input files."""
    exit_code = 2


class MissingInputError(InputError, FileNotFoundError):
    pass


class SchemaError(InputError):
    pass


class ParseError(InputError):
    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        super().__init__(message)
        self.row = row
        self.column = column


class DataPreparationError(InputError):
    pass


class ConfigurationError(MisMeError, ValueError):
    exit_code = 2


class DimensionError(MisMeError, ValueError):
    pass


class ContractError(MisMeError, ValueError):
    pass


class UndefinedCorrelationError(MisMeError, ValueError):
    pass


class UndefinedMetricError(MisMeError, ValueError):
    pass


class OutOfBoundsError(MisMeError, ValueError):
    pass


class TrainingDivergedError(MisMeError, ArithmeticError):
    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(f"Non-finite loss {loss!r} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
