from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from functools import cached_property, lru_cache, reduce
from math import comb
from typing import TYPE_CHECKING, Callable

import numpy as np
from numpy.polynomial import Polynomial

from qmath.workbench.exceptions import (
    ConstantFunctionError,
    InvalidInputError,
    NotDeterministicError,
    TooLargeError,
)
from qmath.workbench.linalg import SeedLike, haar_unitary, rng_from

if TYPE_CHECKING:
    from collections.abc import Iterator, Sequence

log = logging.getLogger(__name__)

ERASED = 2
KRAUS_TOL = 1e-10
MATTHEW_TOL = 1e-9
DETERMINISTIC_TOL = 1e-9
MAX_MONOTONE_CHECK = 20
MAX_RELIABILITY = 24
MAX_ENUMERATE = 5

# Embedding of a qubit into span{up, down, E}
EMBED = np.eye(3, 2, dtype=complex)


def default_grid(step: float = 0.02) -> np.ndarray:
    """Probabilities ``step, 2 step, ...`` strictly inside (0, 1)."""
    count = round(1 / step)
    return np.round(np.arange(1, count) * step, 12)


@dataclass(frozen=True)
class ErasureChannel:
    """Transmits a qubit with probability ``p`` and replaces it by the erasure flag ``|E>`` otherwise."""

    p: float

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise InvalidInputError(f"Transmission probability must lie in [0, 1], got {self.p}")

    def kraus(self) -> list[np.ndarray]:
        lost = np.sqrt(1 - self.p)
        return [
            np.sqrt(self.p) * EMBED,
            lost * np.outer(np.eye(3)[ERASED], np.eye(2)[0]),
            lost * np.outer(np.eye(3)[ERASED], np.eye(2)[1]),
        ]


def erasure_apply(ch: ErasureChannel, rho: np.ndarray, *, tol: float = 1e-10) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (2, 2):
        raise InvalidInputError(f"Expected a qubit density matrix, got shape {rho.shape}")
    if np.abs(rho - rho.conj().T).max() > tol or abs(np.trace(rho) - 1) > tol:
        raise InvalidInputError("Input is not a Hermitian trace-one matrix")
    if np.linalg.eigvalsh((rho + rho.conj().T) / 2)[0] < -tol:
        raise InvalidInputError("Input is not positive semidefinite")

    out = ch.p * (EMBED @ rho @ EMBED.conj().T)
    out[ERASED, ERASED] += 1 - ch.p
    return out


def erasure_pattern_kraus(pattern: Sequence[int]) -> list[np.ndarray]:
    """Kraus operators of a fixed erasure pattern on ``k`` qubits, mapping ``2^k`` to ``3^k`` dimensions.

    Qubit ``i`` passes when ``pattern[i]`` is 1 and is replaced by the erasure flag when it is 0. With an all-zero
    pattern this is the map that hides every qubit.
    """
    per_qubit = []
    for bit in pattern:
        if bit:
            per_qubit.append([EMBED])
        else:
            per_qubit.append([np.outer(np.eye(3)[ERASED], np.eye(2)[j]) for j in range(2)])

    if not per_qubit:
        return [np.eye(1, dtype=complex)]
    return [reduce(np.kron, ops) for ops in itertools.product(*per_qubit)]


def _popcounts(n: int) -> np.ndarray:
    idx = np.arange(1 << n)
    return np.array([bin(i).count("1") for i in idx.tolist()], dtype=int)


class BooleanFn:
    """A Boolean function on ``n`` bits stored as a truth table.

    Bit ``i`` of a table index is the value of ``s_{i+1}``. The integer ``function_id`` packs the table itself, bit
    ``x`` of the id being ``F(x)``.
    """

    def __init__(self, n: int, table: Sequence[bool] | np.ndarray):
        table = np.asarray(table, dtype=bool)
        if n < 0 or table.shape != (1 << n,):
            raise InvalidInputError(f"Truth table of an {n}-bit function must have {1 << n} entries")
        self.n = n
        self.table = table

    def __repr__(self) -> str:
        return f"<{self.__class__.__name__} n={self.n} id={self.function_id:#x}>"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BooleanFn):
            return NotImplemented
        return self.n == other.n and bool((self.table == other.table).all())

    def __hash__(self) -> int:
        return hash((self.n, self.function_id))

    def __call__(self, s: int | Sequence[int]) -> bool:
        if not isinstance(s, (int, np.integer)):
            s = sum(int(bool(bit)) << i for i, bit in enumerate(s))
        return bool(self.table[s])

    @classmethod
    def from_callable(cls, n: int, fn: Callable[[tuple[int, ...]], bool]) -> BooleanFn:
        table = [bool(fn(tuple((x >> i) & 1 for i in range(n)))) for x in range(1 << n)]
        return cls(n, table)

    @classmethod
    def from_id(cls, n: int, function_id: int) -> BooleanFn:
        return cls(n, [(function_id >> x) & 1 for x in range(1 << n)])

    @cached_property
    def function_id(self) -> int:
        return sum(1 << x for x in np.flatnonzero(self.table).tolist())

    @cached_property
    def weights(self) -> np.ndarray:
        return _popcounts(self.n)

    @property
    def is_constant(self) -> bool:
        return bool(self.table.all() or not self.table.any())

    def is_monotone(self) -> bool:
        """Check ``F(s) <= F(s + e_i)`` for every single bit cover."""
        idx = np.arange(1 << self.n)
        for i in range(self.n):
            low = idx[(idx >> i) & 1 == 0]
            if (self.table[low] & ~self.table[low | (1 << i)]).any():
                return False
        return True


class MonotoneBooleanFn(BooleanFn):
    def __init__(self, n: int, table: Sequence[bool] | np.ndarray):
        super().__init__(n, table)
        if n > MAX_MONOTONE_CHECK:
            raise TooLargeError(f"Monotonicity is only certified for n <= {MAX_MONOTONE_CHECK}, got {n}")
        if not self.is_monotone():
            raise InvalidInputError(f"Function {self.function_id:#x} on {n} bits is not monotone")


@dataclass(frozen=True)
class ReliabilityPolynomial:
    """Acceptance probability ``f(p)`` of a Boolean function on independent bits that are 1 with probability ``p``.

    ``counts[w]`` is the number of accepted inputs of weight ``w``, so ``f`` has Bernstein coefficients
    ``counts[w] / C(n, w)``. ``pivotal[w]`` counts pairs ``(s, i)`` with ``s_i = 0``, ``|s| = w`` and
    ``F(s + e_i) - F(s)``, which gives the derivative ``f'(p) = sum_w pivotal[w] p^w (1 - p)^(n - 1 - w)``.
    """

    n: int
    counts: np.ndarray
    pivotal: np.ndarray

    def __call__(self, p: float | np.ndarray) -> float | np.ndarray:
        return self._bernstein(self.counts, self.n, p)

    def failure(self, p: float | np.ndarray) -> float | np.ndarray:
        """``1 - f(p)`` summed from the rejected inputs, without cancellation."""
        rejected = np.array([comb(self.n, w) for w in range(self.n + 1)]) - self.counts
        return self._bernstein(rejected, self.n, p)

    def derivative(self, p: float | np.ndarray) -> float | np.ndarray:
        if self.n == 0:
            return np.zeros_like(np.asarray(p, dtype=float))
        return self._bernstein(self.pivotal, self.n - 1, p)

    @staticmethod
    def _bernstein(coeffs: np.ndarray, degree: int, p: float | np.ndarray) -> float | np.ndarray:
        p = np.asarray(p, dtype=float)
        w = np.arange(degree + 1)
        terms = coeffs * np.power.outer(p, w) * np.power.outer(1 - p, degree - w)
        out = terms.sum(axis=-1)
        return float(out) if out.ndim == 0 else out

    @property
    def bernstein(self) -> np.ndarray:
        """Coefficients in the normalized Bernstein basis ``C(n, w) p^w (1 - p)^(n - w)``."""
        return self.counts / np.array([comb(self.n, w) for w in range(self.n + 1)])

    @cached_property
    def monomial(self) -> Polynomial:
        p = Polynomial([0, 1])
        q = Polynomial([1, -1])
        out = Polynomial([0])
        for w, count in enumerate(self.counts.tolist()):
            if count:
                out = out + count * p**w * q ** (self.n - w)
        return out


def reliability_poly(fn: BooleanFn) -> ReliabilityPolynomial:
    if fn.n > MAX_RELIABILITY:
        raise TooLargeError(f"Reliability polynomials are limited to n <= {MAX_RELIABILITY}, got {fn.n}")

    weights = fn.weights
    counts = np.bincount(weights[fn.table], minlength=fn.n + 1)

    pivotal = np.zeros(max(fn.n, 1), dtype=int)
    idx = np.arange(1 << fn.n)
    for i in range(fn.n):
        low = idx[(idx >> i) & 1 == 0]
        diff = fn.table[low | (1 << i)].astype(int) - fn.table[low].astype(int)
        pivotal += np.bincount(weights[low], weights=diff, minlength=fn.n).astype(int)[: max(fn.n, 1)]

    return ReliabilityPolynomial(fn.n, counts, pivotal)


@dataclass(frozen=True)
class MatthewReport:
    """Outcome of the log-derivative comparison on a grid of probabilities.

    ``ratios`` holds ``p (1 - p) g'(p) / g(p)`` with ``g = f / (1 - f)``, which must not drop below 1.
    """

    grid: np.ndarray
    ratios: np.ndarray
    passed: bool
    corollary_holds: bool

    @property
    def min_ratio(self) -> float:
        return float(self.ratios.min())


def matthew_check(
    fn: MonotoneBooleanFn, grid: np.ndarray | None = None, *, tol: float = MATTHEW_TOL
) -> MatthewReport:
    if fn.is_constant:
        raise ConstantFunctionError(f"Function {fn.function_id:#x} is constant")

    grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
    poly = reliability_poly(fn)

    f = poly(grid)
    ratios = grid * (1 - grid) * poly.derivative(grid) / (f * poly.failure(grid))
    passed = bool((ratios >= 1 - tol).all())

    # f(p) > p at some p <= 1/2 forces f(p) + f(1 - p) > 1
    low = grid <= 0.5
    premise = low & (f > grid + tol)
    corollary = bool((f[premise] + poly(1 - grid[premise]) > 1).all())

    if not passed:
        log.warning("Function %#x fails the log-derivative bound: min ratio %.12f", fn.function_id, ratios.min())
    return MatthewReport(grid, ratios, passed, corollary)


@lru_cache(maxsize=None)
def _monotone_tables(n: int) -> tuple[int, ...]:
    if n == 0:
        return (0, 1)

    half = 1 << (n - 1)
    smaller = _monotone_tables(n - 1)
    tables = [a | (b << half) for a in smaller for b in smaller if a & ~b == 0]
    return tuple(sorted(tables))


def enumerate_monotone(n: int) -> Iterator[MonotoneBooleanFn]:
    """All monotone Boolean functions on ``n <= 5`` bits, by increasing function id.

    A monotone function on ``n`` bits is a pair ``a <= b`` of monotone functions on ``n - 1`` bits, taken on the
    halves where the top bit is 0 and 1.
    """
    if n < 0:
        raise InvalidInputError(f"Number of bits must be nonnegative, got {n}")
    if n > MAX_ENUMERATE:
        raise TooLargeError(f"Exhaustive enumeration is limited to n <= {MAX_ENUMERATE}, got {n}")

    for table in _monotone_tables(n):
        yield MonotoneBooleanFn(n, [(table >> x) & 1 for x in range(1 << n)])


def monotonize(fn: BooleanFn) -> MonotoneBooleanFn:
    """Smallest monotone function above ``fn``: accept ``s`` when some ``t <= s`` is accepted."""
    table = fn.table.copy()
    idx = np.arange(1 << fn.n)
    for i in range(fn.n):
        low = idx[(idx >> i) & 1 == 0]
        table[low | (1 << i)] |= table[low]
    return MonotoneBooleanFn(fn.n, table)


@dataclass(frozen=True)
class ComplementReport:
    """Whether a function accepts some input together with its complement.

    Without such a pair the no-cloning constraint ``f(p) + f(1 - p) <= 1`` must hold, and with it ``f(p) <= p`` for
    ``p <= 1/2``. Both are only evaluated when no pair exists.
    """

    has_complementary_pair: bool
    max_sum: float
    inequality_holds: bool | None
    dominated: bool | None


def complement_pair_check(
    fn: MonotoneBooleanFn, grid: np.ndarray | None = None, *, tol: float = 1e-12
) -> ComplementReport:
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
    has_pair = bool((fn.table & fn.table[::-1]).any())

    poly = reliability_poly(fn)
    sums = poly(grid) + poly(1 - grid)
    max_sum = float(np.max(sums))

    if has_pair:
        return ComplementReport(True, max_sum, None, None)

    low = grid[grid <= 0.5]
    dominated = bool((poly(low) <= low + tol).all())
    return ComplementReport(False, max_sum, max_sum <= 1 + tol, dominated)


def _check_kraus(ops: Sequence[np.ndarray], name: str, tol: float) -> list[np.ndarray]:
    ops = [np.asarray(op, dtype=complex) for op in ops]
    if not ops or len({op.shape for op in ops}) != 1:
        raise InvalidInputError(f"{name} must be a non-empty list of equally shaped matrices")

    total = sum(op.conj().T @ op for op in ops)
    defect = float(np.abs(total - np.eye(total.shape[0])).max())
    if defect > tol:
        raise InvalidInputError(f"{name} is not trace preserving: defect {defect:.3e}")
    return ops


class QubitDecodeChannel:
    """A decoder acting on what the receiver gets for a fixed erasure pattern.

    ``kraus`` maps the received space to span{up, down, E}. ``input_map`` is the channel from the sent qubit to the
    received space, i.e. the encoder followed by the erasure pattern. By default a single qubit is sent and not
    erased.
    """

    def __init__(
        self,
        kraus: Sequence[np.ndarray],
        *,
        input_map: Sequence[np.ndarray] | None = None,
        pattern: Sequence[int] = (1,),
        tol: float = KRAUS_TOL,
    ):
        self.kraus = _check_kraus(kraus, "Decoder", tol)
        self.input_map = _check_kraus([EMBED] if input_map is None else input_map, "Input map", tol)
        self.pattern = tuple(pattern)

        if self.kraus[0].shape[0] != 3:
            raise InvalidInputError(f"Decoder output must be 3-dimensional, got {self.kraus[0].shape[0]}")
        if self.kraus[0].shape[1] != self.input_map[0].shape[0]:
            raise InvalidInputError("Decoder input does not match the received space")
        if self.input_map[0].shape[1] != 2:
            raise InvalidInputError("Input map must start from a qubit")

    @classmethod
    def for_pattern(
        cls, encoder: Sequence[np.ndarray], decoder: Sequence[np.ndarray], pattern: Sequence[int]
    ) -> QubitDecodeChannel:
        input_map = [p @ e for p in erasure_pattern_kraus(pattern) for e in encoder]
        return cls(decoder, input_map=input_map, pattern=pattern)

    @classmethod
    def identity(cls) -> QubitDecodeChannel:
        return cls([np.eye(3, dtype=complex)])

    @classmethod
    def to_mixed(cls) -> QubitDecodeChannel:
        """Decoder that outputs the maximally mixed qubit whatever it receives."""
        return cls([np.outer(np.eye(3)[a], np.eye(3)[b]) / np.sqrt(2) for a in range(2) for b in range(3)])

    @classmethod
    def random(cls, seed: SeedLike = None, rank: int = 3) -> QubitDecodeChannel:
        isometry = haar_unitary(3 * rank, rng_from(seed))[:, :3]
        return cls([isometry[3 * j : 3 * j + 3] for j in range(rank)])

    @cached_property
    def qubit_block(self) -> list[np.ndarray]:
        """Composite Kraus operators from the sent qubit to the output qubit block."""
        return [EMBED.conj().T @ k @ m for k in self.kraus for m in self.input_map]

    def mistake_rate(self, psi: np.ndarray) -> np.ndarray:
        """``1 - <psi| D(psi psi^H) |psi>`` for one state or a stack of states of shape ``(..., 2)``."""
        psi = np.asarray(psi, dtype=complex)
        fidelity = sum(np.abs(np.einsum("...a,ab,...b->...", psi.conj(), k, psi)) ** 2 for k in self.qubit_block)
        return 1.0 - fidelity


@dataclass(frozen=True)
class MistakeRates:
    average: float
    maximum: float

    @property
    def ratio(self) -> float:
        return self.maximum / self.average if self.average > 0 else float("nan")


def _bloch(theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
    return np.stack([np.cos(theta / 2) + 0j, np.exp(1j * phi) * np.sin(theta / 2)], axis=-1)


def haar_average(dec: QubitDecodeChannel) -> float:
    """Exact average mistake rate over Haar random pure states.

    Uses ``E[psi psi^H (x) psi psi^H] = (I + SWAP) / 6`` on two qubits, which gives
    ``E |<psi|K|psi>|^2 = (|tr K|^2 + tr K^H K) / 6``.
    """
    total = sum(abs(np.trace(k)) ** 2 + np.trace(k.conj().T @ k).real for k in dec.qubit_block)
    return float(1.0 - total / 6.0)


def haar_average_quadrature(dec: QubitDecodeChannel, nodes: int = 316) -> float:
    """Average mistake rate by Gauss-Legendre quadrature in ``cos(theta)`` and the trapezoid rule in ``phi``."""
    u, w = np.polynomial.legendre.leggauss(nodes)
    theta = np.arccos(u)
    phi = np.linspace(0, 2 * np.pi, nodes, endpoint=False)
    tt, pp = np.meshgrid(theta, phi, indexing="ij")
    rates = dec.mistake_rate(_bloch(tt, pp))
    return float((w[:, None] * rates).sum() / (2 * nodes))


def mistake_rates(dec: QubitDecodeChannel, *, grid: int = 100, levels: int = 3) -> MistakeRates:
    """Average and maximum mistake rates over pure input states.

    The maximum is searched on a ``grid x grid`` mesh of the Bloch sphere followed by ``levels`` rounds of local
    refinement around the best point; each round keeps the incumbent so the estimate never decreases.
    """
    theta = np.linspace(0, np.pi, grid)
    phi = np.linspace(0, 2 * np.pi, grid, endpoint=False)
    tt, pp = np.meshgrid(theta, phi, indexing="ij")
    rates = dec.mistake_rate(_bloch(tt, pp))

    best = np.unravel_index(np.argmax(rates), rates.shape)
    best_theta, best_phi, best_value = tt[best], pp[best], float(rates[best])

    h_theta, h_phi = np.pi / (grid - 1), 2 * np.pi / grid
    for _ in range(levels):
        t = np.clip(best_theta + np.linspace(-h_theta, h_theta, 11), 0, np.pi)
        p = best_phi + np.linspace(-h_phi, h_phi, 11)
        tt, pp = np.meshgrid(t, p, indexing="ij")
        rates = dec.mistake_rate(_bloch(tt, pp))
        idx = np.unravel_index(np.argmax(rates), rates.shape)
        if rates[idx] > best_value:
            best_theta, best_phi, best_value = tt[idx], pp[idx], float(rates[idx])
        h_theta /= 5
        h_phi /= 5

    return MistakeRates(haar_average(dec), best_value)


def decoder_indicator(
    encoder: Sequence[np.ndarray], decoder: Sequence[np.ndarray], n: int, *, tol: float = DETERMINISTIC_TOL
) -> BooleanFn:
    """Boolean function ``F(s) = 1 - <E| D(rho_s) |E>`` of a deterministic decoder.

    ``rho_s`` is the encoding of the maximally mixed qubit with erasure pattern ``s`` applied. The decoder is
    deterministic when every value is 0 or 1, otherwise :class:`NotDeterministicError` is raised.
    """
    decoder = _check_kraus(decoder, "Decoder", KRAUS_TOL)
    encoder = _check_kraus(encoder, "Encoder", KRAUS_TOL)

    values = []
    for x in range(1 << n):
        pattern = [(x >> i) & 1 for i in range(n)]
        rho = np.zeros((3**n, 3**n), dtype=complex)
        for p in erasure_pattern_kraus(pattern):
            for e in encoder:
                m = p @ e
                rho += m @ m.conj().T / 2
        flag = sum((k @ rho @ k.conj().T)[ERASED, ERASED].real for k in decoder)
        values.append(1.0 - flag)

    values = np.array(values)
    rounded = np.round(values)
    if np.abs(values - rounded).max() > tol:
        raise NotDeterministicError(f"Decoder output depends on more than the erasure pattern: {values.tolist()}")
    return BooleanFn(n, rounded.astype(bool))
