"""Exception types raised across the package."""


class GraphCPDError(Exception):
    """Base class for all package errors."""


class FormatError(GraphCPDError, ValueError):
    """A file does not decode to a valid object.

    The message names the offending field.
    """


class ConfigError(GraphCPDError, ValueError):
    """A parameter or configuration value violates its constraint."""


class DimensionError(GraphCPDError, ValueError):
    """Array shapes do not agree."""
