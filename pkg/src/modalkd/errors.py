"""Exception hierarchy shared by every module of the package."""


class ModalKDError(Exception):
    """Base class for all package errors."""


class ParameterError(ModalKDError, ValueError):
    """An argument or configuration value is outside its allowed range."""


class DimensionError(ModalKDError, ValueError):
    """Tensor or feature shapes are incompatible."""


class DataError(ModalKDError, ValueError):
    """A sample or label does not fit the model or dataset it is used with."""


class ContractError(ModalKDError, RuntimeError):
    """An API precondition was violated (e.g. backward on a non-scalar)."""


class NonFiniteError(ModalKDError, FloatingPointError):
    """A forward or backward computation produced NaN or Inf."""


class ParseError(ModalKDError, ValueError):
    """A document or file could not be parsed.

    ``where`` is a line number (CSV) or a dotted field path (JSON documents).
    """

    def __init__(self, message, where=None):
        self.where = where
        if where is not None:
            message = f"{where}: {message}"
        super().__init__(message)


class TrainingError(ModalKDError, RuntimeError):
    """Training diverged."""

    def __init__(self, message, epoch, batch):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"{message} (epoch {epoch}, batch {batch})")
