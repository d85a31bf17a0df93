"""Exception hierarchy shared across the package."""


class MopgrnnError(Exception):
    """Base class for all package errors."""


class InvalidInputError(MopgrnnError, ValueError):
    """Arguments violate a documented precondition."""


class ConfigurationError(MopgrnnError):
    """A model, run or experiment is configured inconsistently."""


class SchemaError(MopgrnnError):
    """A serialized file does not match the expected schema."""


class DivergenceError(MopgrnnError, ArithmeticError):
    """A simulation or training run produced non-finite values."""

    def __init__(self, message, *, t=None, step=None, epoch=None, sample=None):
        super().__init__(message)
        self.t = t
        self.step = step
        self.epoch = epoch
        self.sample = sample
