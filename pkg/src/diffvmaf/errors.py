"""Exception types shared across the package."""


class VmafError(Exception):
    """Base class for all package errors."""


class InvalidArgument(VmafError, ValueError):
    """An argument violates a documented precondition (shape, size, range)."""


class InvalidState(VmafError, RuntimeError):
    """An object is used in a state that does not allow the operation."""


class NumericDomainError(VmafError, ArithmeticError):
    """A computation left its numeric domain (zero division, NaN, ...)."""


class ModelFormatError(InvalidArgument):
    """A model, filter or config file is malformed."""
