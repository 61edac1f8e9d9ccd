from __future__ import annotations


class Error(Exception):
    pass


class InvalidInputError(Error, ValueError):
    pass


class TooLargeError(InvalidInputError):
    pass


class InvalidWindowError(InvalidInputError):
    pass


class InvalidPovmError(Error):
    pass


class RankDeficientError(Error, ArithmeticError):
    pass


class NotCommutingError(Error):
    pass


class UnsupportedError(Error, NotImplementedError):
    pass


class UnreachablePairError(Error):
    pass


class GenerationFailure(Error, RuntimeError):
    pass


class GridTooCoarseError(Error):
    pass


class OutOfRegimeError(Error):
    """Raised when an input leaves the regime in which a map is defined.

    ``theta`` holds the offending flux angles when the failure happened while sweeping a torus of twists.
    """

    def __init__(self, *args, theta: tuple[float, ...] | None = None):
        super().__init__(*args)
        self.theta = theta


class CutCollisionError(Error):
    pass


class DilationFailure(Error):
    def __init__(self, *args, diagnostics: dict | None = None):
        super().__init__(*args)
        self.diagnostics = diagnostics or {}


class ConstantFunctionError(Error):
    pass


class NotDeterministicError(Error):
    pass


class ConfigError(Error):
    pass


class InvariantViolation(Error, AssertionError):
    pass
