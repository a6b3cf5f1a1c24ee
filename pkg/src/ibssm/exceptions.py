"""Exception hierarchy: configuration errors exit 1, runtime/numeric errors exit 2."""


class IbssmError(Exception):
    """Base class for package errors."""


class ConfigurationError(IbssmError):
    """Invalid configuration, dimensions, or arguments."""


class DataError(IbssmError):
    """Malformed or insufficient input data."""


class StabilityError(IbssmError):
    """State matrix violates the strictly-negative (Hurwitz) requirement."""


class NumericOverflowError(IbssmError):
    """Non-finite value produced during computation."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class TrainingDivergedError(IbssmError):
    """Loss became non-finite during optimization."""

    def __init__(self, message, epoch=None, step=None):
        super().__init__(message)
        self.epoch = epoch
        self.step = step
