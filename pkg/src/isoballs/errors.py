"""Exception types raised across the package."""


class IsoballsError(Exception):
    """Base class for all package errors."""


class ModelError(IsoballsError, ValueError):
    """Invalid urn model specification."""


class TooLargeError(IsoballsError):
    """Instance exceeds the size supported by an exact method."""


class PrecisionError(IsoballsError, ArithmeticError):
    """Arbitrary-precision evaluation could not meet its error budget."""


class PreconditionError(IsoballsError, ValueError):
    """A documented precondition of a formula is violated."""
