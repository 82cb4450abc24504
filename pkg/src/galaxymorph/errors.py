"""Exception hierarchy shared by all galaxymorph modules."""


class GalaxyMorphError(Exception):
    """Base class for all package errors."""


class SchemaError(GalaxyMorphError, ValueError):
    """Input table does not match the configured column schema."""


class EmptyInputError(GalaxyMorphError, ValueError):
    pass


class DimensionError(GalaxyMorphError, ValueError):
    pass


class NumericError(GalaxyMorphError, ArithmeticError):
    """A computation produced NaN or infinite values."""


class TrainingError(NumericError):
    """Training aborted; message names the epoch and batch."""

    def __init__(self, message: str, epoch: int, batch: int):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
