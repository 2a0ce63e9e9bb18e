"""Exception types shared across the package."""


class CssdfError(Exception):
    """Base class for all package errors."""


class InvalidInputError(CssdfError):
    """Malformed argument: wrong dimension, non-finite value, empty list."""


class EmptyIndexError(CssdfError):
    """Nearest-neighbor query against an index with no points."""


class BoundaryBracketError(CssdfError):
    """Bisection endpoints carry the same collision label."""


class ClassMissingError(CssdfError):
    """Dataset balancing requires both collision classes to be present."""


class OutOfBoundsError(CssdfError):
    """Point or sphere falls outside the hashed workspace box."""


class DegenerateGradientError(CssdfError):
    """Gradient is too close to zero to define a direction."""


class ZeroDistanceError(CssdfError):
    """Two configurations coincide where a distance is required."""


class PlanningFailedError(CssdfError):
    """Sampling planner exhausted its budget without a path."""


class DivergenceError(CssdfError):
    """Training loss became non-finite."""


class SchemaError(CssdfError):
    """Structured input file does not match the expected schema."""


class VersionError(CssdfError):
    """File carries an unsupported format version."""
