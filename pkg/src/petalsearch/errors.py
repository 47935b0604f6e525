"""Exception types shared across the package."""


class PetalSearchError(Exception):
    """Base class for all package errors."""


class ConfigError(PetalSearchError, ValueError):
    """Invalid configuration value or inconsistent parameters."""


class BoundsError(PetalSearchError, IndexError):
    """A location falls outside the feature map."""


class ShapeError(PetalSearchError, ValueError):
    """Array or feature shapes are incompatible."""


class EmptyInputError(PetalSearchError, ValueError):
    """An aggregation received no records."""


class FormatError(PetalSearchError, ValueError):
    """A binary container or record file is malformed."""
