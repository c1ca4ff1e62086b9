"""Exception hierarchy shared by every module."""


class TsproxError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(TsproxError, ValueError):
    pass


class ShapeError(TsproxError, ValueError):
    pass


class RangeError(TsproxError, IndexError):
    pass


class DomainError(TsproxError, ValueError):
    pass


class ProtocolError(TsproxError, RuntimeError):
    """A query broke the online reveal order or the oracle's window reach."""


class ConfigError(TsproxError, ValueError):
    """A step/noise configuration violates a required inequality."""


class InvariantError(TsproxError, AssertionError):
    """A per-step guarantee failed at runtime (bug or wrong smoothness constant)."""


class SchemaError(TsproxError, ValueError):
    pass


class CappedRunError(TsproxError, RuntimeError):
    """An inner loop hit the safety cap. ``trace`` holds the rounds completed so far."""

    def __init__(self, message, trace=None, round_index=None):
        super().__init__(message)
        self.trace = trace
        self.round_index = round_index
