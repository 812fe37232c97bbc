"""Exception types raised across the package."""


class InvalidInputError(ValueError):
    """Input violates a documented precondition (shape, dimension, range)."""


class NoPolytopeError(InvalidInputError):
    """Half-space intersection is empty or unbounded."""


class UnderdeterminedError(InvalidInputError):
    """Too few observed entries to complete a distance matrix."""


class DegenerateCombinationError(InvalidInputError):
    """A derived wall normal collapsed to (near) zero length."""
