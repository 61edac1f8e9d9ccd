from __future__ import annotations

import pytest

from qmath.workbench import exceptions


@pytest.mark.parametrize(
    ("exc", "std"),
    [
        (exceptions.InvalidInputError, ValueError),
        (exceptions.TooLargeError, ValueError),
        (exceptions.InvalidWindowError, ValueError),
        (exceptions.RankDeficientError, ArithmeticError),
        (exceptions.UnsupportedError, NotImplementedError),
        (exceptions.GenerationFailure, RuntimeError),
        (exceptions.InvariantViolation, AssertionError),
    ],
)
def test_standard_error_subclass(exc: exceptions.Error, std: Exception) -> None:
    assert issubclass(exc, std)
    assert isinstance(exc(), std)

    with pytest.raises(std):
        raise exc()


@pytest.mark.parametrize(
    "exc",
    [
        exceptions.InvalidPovmError,
        exceptions.NotCommutingError,
        exceptions.UnreachablePairError,
        exceptions.GridTooCoarseError,
        exceptions.OutOfRegimeError,
        exceptions.CutCollisionError,
        exceptions.DilationFailure,
        exceptions.ConstantFunctionError,
        exceptions.NotDeterministicError,
        exceptions.ConfigError,
    ],
)
def test_library_error_subclass(exc: exceptions.Error) -> None:
    assert issubclass(exc, exceptions.Error)
    assert not issubclass(exc, ValueError)


def test_error_payloads() -> None:
    e = exceptions.OutOfRegimeError("gap closed", theta=(0.5, 1.0))
    assert e.theta == (0.5, 1.0)
    assert str(e) == "gap closed"
    assert exceptions.OutOfRegimeError("x").theta is None

    e = exceptions.DilationFailure("failed", diagnostics={"unitarity": 1.0})
    assert e.diagnostics == {"unitarity": 1.0}
    assert exceptions.DilationFailure().diagnostics == {}
