"""Exception hierarchy shared by all modules."""


class OccPlanError(Exception):
    """Base class for all package errors."""


class GeometryError(OccPlanError, ValueError):
    pass


class ConfigurationError(OccPlanError, ValueError):
    """Malformed model, scenario or parameter block."""


class ParameterError(ConfigurationError):
    pass


class RangeError(OccPlanError, ValueError):
    """Query time outside the covered interval."""


class CoverageError(RangeError):
    """A time-indexed input does not span the required interval."""


class OrderingError(OccPlanError, ValueError):
    pass


class StateError(OccPlanError, RuntimeError):
    pass


class ConstraintError(OccPlanError, ValueError):
    """Start/goal or initial trajectory violates hard limits."""


class ParseError(ConfigurationError):
    """File parsing failure; the message carries line/field context."""
