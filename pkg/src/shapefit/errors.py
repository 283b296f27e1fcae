"""Exception hierarchy shared across the package."""


class ShapeFitError(Exception):
    """Base class for all package-specific errors."""


class FormatError(ShapeFitError):
    """A file does not conform to its declared format or version."""


class DegenerateShapeError(ShapeFitError):
    """A shape has no usable spatial extent (all points coincident)."""


class InitDegenerateError(ShapeFitError):
    """The robust-initialization system is singular (no usable evidence)."""


class ZeroEvidenceError(ShapeFitError):
    """A response patch carries no mass where positive mass is required."""
