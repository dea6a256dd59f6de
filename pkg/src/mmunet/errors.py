"""Exception types shared across the package.

All derive from ``ValueError`` so callers that only care about "bad input"
can catch a single class.
"""


class MMUNetError(ValueError):
    pass


class ShapeError(MMUNetError):
    """Operand extents do not line up."""


class ConfigError(MMUNetError):
    """A structural setting (kernel, patch size, grouping, ...) is invalid."""


class DataError(MMUNetError):
    """Sample contents are out of range, e.g. a class id >= num_classes."""


class FormatError(MMUNetError):
    """A file on disk does not follow the expected binary/text layout."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class UsageError(MMUNetError):
    """An API was called in a state where it cannot do anything sensible."""
