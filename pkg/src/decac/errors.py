"""Exception types shared across the package.

Raise the most specific type that applies; all of them derive from
DecacError so callers can catch everything from this package at once.
"""


class DecacError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(DecacError, ValueError):
    """A config file, CLI flag, or constructor argument is invalid."""


class DomainError(DecacError, ValueError):
    """A numeric input lies outside the documented domain."""


class DimensionError(DecacError, ValueError):
    """An array argument has the wrong shape for the operation."""


class UnsupportedError(DecacError, NotImplementedError):
    """The request names a variant this implementation does not cover."""


class InternalError(DecacError, RuntimeError):
    """An invariant the implementation maintains itself was violated."""
