from __future__ import annotations

import numpy as np
import pytest
from numpy.testing import assert_allclose

from qmath.workbench.channels import (
    ERASED,
    BooleanFn,
    ErasureChannel,
    MonotoneBooleanFn,
    QubitDecodeChannel,
    complement_pair_check,
    decoder_indicator,
    default_grid,
    enumerate_monotone,
    erasure_apply,
    erasure_pattern_kraus,
    haar_average,
    haar_average_quadrature,
    matthew_check,
    mistake_rates,
    monotonize,
    reliability_poly,
)
from qmath.workbench.exceptions import (
    ConstantFunctionError,
    InvalidInputError,
    NotDeterministicError,
    TooLargeError,
)


def majority() -> MonotoneBooleanFn:
    fn = BooleanFn.from_callable(3, lambda s: sum(s) >= 2)
    return MonotoneBooleanFn(3, fn.table)


def first_bit(n: int = 2) -> MonotoneBooleanFn:
    return MonotoneBooleanFn(n, BooleanFn.from_callable(n, lambda s: s[0]).table)


@pytest.mark.parametrize(
    ("n", "count"),
    [
        (0, 2),
        (1, 3),
        (2, 6),
        (3, 20),
        (4, 168),
        (5, 7581),
    ],
)
def test_enumerate_monotone(n: int, count: int) -> None:
    functions = list(enumerate_monotone(n))
    assert len(functions) == count
    ids = [fn.function_id for fn in functions]
    assert ids == sorted(set(ids))


def test_enumerate_monotone_limits() -> None:
    with pytest.raises(TooLargeError):
        next(enumerate_monotone(6))
    with pytest.raises(InvalidInputError):
        next(enumerate_monotone(-1))


def test_boolean_fn() -> None:
    fn = majority()
    assert fn((1, 1, 0))
    assert not fn((0, 0, 1))
    assert fn(0b101)
    assert fn.function_id == 0b11101000
    assert BooleanFn.from_id(3, fn.function_id) == fn
    assert not fn.is_constant

    with pytest.raises(InvalidInputError):
        BooleanFn(2, [True, False])
    with pytest.raises(InvalidInputError):
        MonotoneBooleanFn(2, [False, True, False, False][::-1])


def test_reliability_poly_majority() -> None:
    poly = reliability_poly(majority())
    assert poly.counts.tolist() == [0, 0, 3, 1]
    assert poly(0.6) == pytest.approx(0.648)
    assert poly.failure(0.6) == pytest.approx(0.352)
    assert poly.derivative(0.5) == pytest.approx(1.5)
    assert_allclose(poly.monomial.coef, [0, 0, 3, -2], atol=1e-12)
    assert_allclose(poly.bernstein, [0, 0, 1, 1])


def test_matthew_majority() -> None:
    report = matthew_check(majority(), [0.5])
    assert report.passed
    assert report.min_ratio == pytest.approx(1.5)
    assert report.corollary_holds


def test_matthew_equality() -> None:
    report = matthew_check(first_bit())
    assert report.passed
    assert_allclose(report.ratios, 1.0)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_matthew_exhaustive(n: int) -> None:
    for fn in enumerate_monotone(n):
        if fn.is_constant:
            continue
        assert matthew_check(fn).passed


def test_matthew_constant() -> None:
    with pytest.raises(ConstantFunctionError):
        matthew_check(MonotoneBooleanFn(2, [True] * 4))


def test_complement_pair() -> None:
    either = MonotoneBooleanFn(2, [False, True, True, True])
    report = complement_pair_check(either)
    assert report.has_complementary_pair
    assert report.max_sum == pytest.approx(1.5)
    assert report.inequality_holds is None
    assert report.dominated is None

    both = MonotoneBooleanFn(2, [False, False, False, True])
    report = complement_pair_check(both)
    assert not report.has_complementary_pair
    assert report.inequality_holds
    assert report.dominated


def test_monotonize() -> None:
    fn = BooleanFn.from_callable(2, lambda s: s[0] and not s[1])
    assert not fn.is_monotone()
    assert monotonize(fn) == first_bit()


def test_default_grid() -> None:
    grid = default_grid()
    assert len(grid) == 49
    assert grid[0] == pytest.approx(0.02)
    assert 0.5 in grid


def test_erasure_channel() -> None:
    rho = np.array([[0.75, 0.25j], [-0.25j, 0.25]])

    full = erasure_apply(ErasureChannel(1.0), rho)
    assert_allclose(full[:2, :2], rho)
    assert full[ERASED, ERASED] == 0

    lost = erasure_apply(ErasureChannel(0.0), rho)
    assert_allclose(lost, np.diag([0, 0, 1]))

    half = ErasureChannel(0.5)
    assert_allclose(sum(k.conj().T @ k for k in half.kraus()), np.eye(2), atol=1e-12)
    assert_allclose(sum(k @ rho @ k.conj().T for k in half.kraus()), erasure_apply(half, rho), atol=1e-12)


@pytest.mark.parametrize(
    ("pattern", "count"),
    [
        ((), 1),
        ((1,), 1),
        ((0,), 2),
        ((1, 0), 2),
        ((0, 0), 4),
    ],
)
def test_erasure_pattern_kraus(pattern: tuple[int, ...], count: int) -> None:
    kraus = erasure_pattern_kraus(pattern)
    k = len(pattern)
    assert len(kraus) == count
    assert all(op.shape == (3**k, 2**k) for op in kraus)
    assert_allclose(sum(op.conj().T @ op for op in kraus), np.eye(2**k), atol=1e-12)


def test_erasure_pattern_kraus_hides() -> None:
    rho = np.array([[0.75, 0.25j], [-0.25j, 0.25]])
    out = sum(op @ rho @ op.conj().T for op in erasure_pattern_kraus((0,)))
    assert_allclose(out, erasure_apply(ErasureChannel(0.0), rho), atol=1e-12)

    out = sum(op @ rho @ op.conj().T for op in erasure_pattern_kraus((1,)))
    assert_allclose(out, erasure_apply(ErasureChannel(1.0), rho), atol=1e-12)


def test_erasure_channel_invalid() -> None:
    with pytest.raises(InvalidInputError):
        ErasureChannel(1.5)
    with pytest.raises(InvalidInputError):
        erasure_apply(ErasureChannel(0.5), np.eye(2))
    with pytest.raises(InvalidInputError):
        erasure_apply(ErasureChannel(0.5), np.diag([1.5, -0.5]))


@pytest.mark.parametrize(
    ("decoder", "average", "maximum"),
    [
        (QubitDecodeChannel.identity(), 0.0, 0.0),
        (QubitDecodeChannel.to_mixed(), 0.5, 0.5),
    ],
)
def test_mistake_rates_fixtures(decoder: QubitDecodeChannel, average: float, maximum: float) -> None:
    rates = mistake_rates(decoder, grid=20, levels=1)
    assert rates.average == pytest.approx(average, abs=1e-12)
    assert rates.maximum == pytest.approx(maximum, abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_mistake_rates_random(seed: int) -> None:
    decoder = QubitDecodeChannel.random(seed, rank=3)
    rates = mistake_rates(decoder, grid=40)
    assert rates.average <= rates.maximum + 1e-12
    assert rates.maximum <= 4 * rates.average + 1e-12
    assert haar_average_quadrature(decoder, nodes=16) == pytest.approx(haar_average(decoder), abs=1e-12)


def test_decode_channel_invalid() -> None:
    with pytest.raises(InvalidInputError):
        QubitDecodeChannel([np.eye(3) * 2])
    with pytest.raises(InvalidInputError):
        QubitDecodeChannel([np.eye(2)])


def test_decode_channel_for_pattern() -> None:
    eye = [np.eye(2, dtype=complex)]
    decoder = [np.eye(3, dtype=complex)]
    psi = np.array([0.6, 0.8j])

    kept = QubitDecodeChannel.for_pattern(eye, decoder, (1,))
    assert kept.mistake_rate(psi) == pytest.approx(0.0)

    erased = QubitDecodeChannel.for_pattern(eye, decoder, (0,))
    assert erased.mistake_rate(psi) == pytest.approx(1.0)


def test_decoder_indicator() -> None:
    fn = decoder_indicator([np.eye(2)], [np.eye(3)], 1)
    assert fn.table.tolist() == [False, True]


def test_decoder_indicator_not_deterministic() -> None:
    e = np.eye(3)
    kraus = [np.outer(e[a], e[b]) / np.sqrt(2) for a in (0, ERASED) for b in range(3)]
    with pytest.raises(NotDeterministicError):
        decoder_indicator([np.eye(2)], kraus, 1)
