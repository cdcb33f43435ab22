"""Exception types raised across the package."""


class MstCltError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(MstCltError, ValueError):
    """A parameter is outside its documented domain."""


class NoPathError(MstCltError):
    """Two vertices lie in different components of a spanning forest."""


class BridgeError(MstCltError):
    """Removing an edge disconnects the graph."""


class DegenerateFunctionalError(MstCltError):
    """A statistic has zero variance, so standardization is undefined."""


class InvariantViolation(MstCltError):
    """An internal consistency check failed."""
