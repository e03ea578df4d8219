"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Array dimensions do not compose."""


class DomainError(ValueError):
    """An argument lies outside the operation's domain."""


class DegenerateInputError(DomainError):
    """Input carries no usable spread (e.g. all rows identical)."""


class NumericError(FloatingPointError):
    """A numerical routine produced or received non-finite values."""
