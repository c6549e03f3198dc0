"""Exception types shared across the package."""


class SurrogateError(Exception):
    """Base class for all package errors."""


class ConfigError(SurrogateError):
    """Invalid user-supplied configuration."""


class ConfigInvalid(ConfigError):
    pass


class ConfigInfeasible(ConfigError):
    pass


class CapacityExceeded(ConfigError):
    pass


class TraceError(SurrogateError):
    """Problems found while ingesting trace files."""


class NoActiveNodes(TraceError):
    pass


class SchemaMismatch(TraceError):
    pass


class GapError(TraceError):
    pass


class TooShort(TraceError):
    pass


class ShapeMismatch(SurrogateError, ValueError):
    pass


class MaskMismatch(ShapeMismatch):
    pass


class SeriesTooShort(SurrogateError, ValueError):
    pass


class WindowTooLong(SurrogateError, ValueError):
    pass


class BackboneUnavailable(SurrogateError):
    pass


class Diverged(SurrogateError):
    pass


class ZeroTruth(SurrogateError, ValueError):
    pass


class OracleExhausted(SurrogateError):
    pass
