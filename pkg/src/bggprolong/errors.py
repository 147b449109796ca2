"""Exception types shared across the package."""


class BGGProlongError(Exception):
    """Base class for all package errors."""


class ConfigError(BGGProlongError, ValueError):
    """Run configuration failed validation."""


class AlgebraInvariantError(BGGProlongError, RuntimeError):
    """An algebraic identity that must hold exactly was violated."""


class DomainError(BGGProlongError, ValueError):
    """A point, path or grid lies outside the admissible chart domain."""


class NumericalInstabilityError(BGGProlongError, RuntimeError):
    """A rank decision could not be made with the required separation."""
