"""Exception types shared across the package."""


class AutocalError(Exception):
    """Base class for all library errors."""


class DimensionMismatch(AutocalError, ValueError):
    pass


class LengthMismatch(DimensionMismatch):
    pass


class NotPositiveDefinite(AutocalError, ValueError):
    pass


class NoConvergence(AutocalError, RuntimeError):
    pass


class NonFiniteOutput(AutocalError, FloatingPointError):
    pass


class NonFiniteState(AutocalError, FloatingPointError):
    pass


class InfeasibleParameters(AutocalError, ValueError):
    pass


class NotSupported(AutocalError, NotImplementedError):
    pass


class WindowTooShort(AutocalError, ValueError):
    pass


class SingularInnovation(AutocalError, ArithmeticError):
    pass


class Unstable(AutocalError, ValueError):
    pass


class DegenerateSequence(AutocalError, ValueError):
    pass


class EpisodeDiverged(AutocalError, RuntimeError):
    pass


class ConfigError(AutocalError, ValueError):
    pass
