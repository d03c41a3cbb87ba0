"""Exception hierarchy.

Every error raised by this package derives from ConoError so callers can
catch the whole family with one clause. Subclasses also derive from the
closest builtin (ValueError, RuntimeError, IOError) so generic handlers
keep working.
"""

from __future__ import annotations


class ConoError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(ConoError, ValueError):
    """A caller-supplied value is malformed or out of range."""


class NumericalDomainError(ConoError, ArithmeticError):
    """An operation left its numeric domain (zero variance, log of 0, ...)."""


class StateError(ConoError, RuntimeError):
    """An operation was invoked in a state that does not permit it."""


class ConfigError(ConoError, ValueError):
    """A run configuration failed validation."""


class ProtocolError(ConoError, RuntimeError):
    """A wire-protocol message violated the framing or schema rules."""


class BridgeError(ConoError, IOError):
    """The external predictor process failed or misbehaved."""
