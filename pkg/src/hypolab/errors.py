"""Exception types shared across the package."""


class HypolabError(Exception):
    """Base class for all package errors."""


class ValidationError(HypolabError, ValueError):
    """Invalid input, configuration or precondition."""


class NumericalError(HypolabError, ArithmeticError):
    """A numerical procedure failed or produced non-finite values."""
