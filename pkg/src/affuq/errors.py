"""Exception types shared across the package."""


class AffuqError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(AffuqError):
    """An argument value lies outside its documented domain."""


class ShapeError(AffuqError):
    """Vector or matrix dimensions do not agree."""


class FormatError(AffuqError):
    """A serialized file or payload is malformed or incompatible."""


class TrainingDivergedError(AffuqError):
    """Optimization produced non-finite losses or gradients."""


class StateError(AffuqError):
    """Objects passed together do not belong to the same computation."""


class ConsistencyError(AffuqError):
    """An internal algebraic identity failed beyond tolerance."""
