"""Exception hierarchy shared by every module of the package."""


class CawarpError(Exception):
    """Base class for all package errors."""


class DimensionError(CawarpError, ValueError):
    """Tensor extents are incompatible for the requested operation."""


class ContractError(CawarpError, RuntimeError):
    """A precondition of an operation was violated by the caller."""


class NumericError(CawarpError, FloatingPointError):
    """NaN or otherwise non-finite values where finite ones are required."""


class ConfigurationError(CawarpError, ValueError):
    """Invalid configuration value or incompatible configuration."""


class GeometryError(CawarpError, ValueError):
    """Degenerate camera geometry (coincident centers, zero baseline, ...)."""


class EmptyNeighborhoodError(CawarpError):
    """A target pixel has no valid epipolar neighbor."""


class DegenerateSceneError(CawarpError, ValueError):
    """A synthetic scene cannot be rendered (camera inside a plane, holes, ...)."""


class ParseError(CawarpError, ValueError):
    """Malformed file contents.  ``offset`` is the byte offset of the problem."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class UnsupervisableError(CawarpError, ValueError):
    """A loss was requested over an empty set of valid pixels."""
