# Cost model of the exact contraction, for bond dimension k and physical dimension d:
# - moving an environment over one site costs O(d k^3)
# - inserting an operator on L consecutive sites costs O(d^(2L) k^2 + d^L k^3)
# A correlator therefore costs O(N d k^3 + d^(2L) k^2), which is why chains are capped at
# k <= 32, d <= 8 and N <= 24.
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, replace
from functools import cached_property
from typing import TYPE_CHECKING, Union

import numpy as np
from scipy.optimize import linear_sum_assignment

from qmath.workbench.exceptions import InvalidInputError, TooLargeError, UnsupportedError
from qmath.workbench.linalg import SeedLike, as_matrix, haar_unitary, operator_norm, rng_from

if TYPE_CHECKING:
    from collections.abc import Sequence

log = logging.getLogger(__name__)

Sites = Union[int, tuple[int, int]]

MAX_BOND = 32
MAX_PHYSICAL = 8
MAX_SITES = 24
MAX_FOLDED_BOND = 6
MAX_ENUMERATION = 4096
HERMITIAN_KRAUS_TOL = 1e-12
TAIL_CONSTANT = 10.0


class MPSChain:
    """An open boundary matrix product state.

    The state is stored as a list of site tensors of shape ``(d, left, right)``, with the first tensor having
    ``left == 1`` and the last ``right == 1``, so that the amplitude of a configuration is the product of the selected
    matrices. Uniform chains additionally remember their bulk tensor ``A(s)`` and boundary vectors ``b`` and ``c``, with
    first and last site tensors ``b^T A(s)`` and ``A(s) c``.

    A chain flagged manifestly Hermitian satisfies ``A(s + d/2) = A(s)^H`` for every ``s``, which makes its transfer
    operator Hermitian as a superoperator.
    """

    def __init__(self, sites: Sequence[np.ndarray], *, manifestly_hermitian: bool = False):
        sites = [np.asarray(site, dtype=complex) for site in sites]
        if len(sites) < 2:
            raise InvalidInputError(f"A chain needs at least two sites, got {len(sites)}")

        self.d = sites[0].shape[0]
        for i, site in enumerate(sites):
            if site.ndim != 3 or site.shape[0] != self.d:
                raise InvalidInputError(f"Site {i + 1} has shape {site.shape}, expected ({self.d}, left, right)")
            if i and sites[i - 1].shape[2] != site.shape[1]:
                raise InvalidInputError(f"Bond dimensions of sites {i} and {i + 1} do not match")
            if not np.isfinite(site).all():
                raise InvalidInputError(f"Site {i + 1} has non-finite entries")

        if sites[0].shape[1] != 1 or sites[-1].shape[2] != 1:
            raise InvalidInputError("Boundary sites must have outer bond dimension 1")

        self.sites = sites
        self.N = len(sites)
        self.manifestly_hermitian = manifestly_hermitian

        self._bulk = None
        self._left = None
        self._right = None

    @classmethod
    def uniform(
        cls,
        bulk: np.ndarray,
        n: int,
        *,
        left: np.ndarray | None = None,
        right: np.ndarray | None = None,
        manifestly_hermitian: bool = False,
    ) -> MPSChain:
        bulk = np.asarray(bulk, dtype=complex)
        if bulk.ndim != 3 or bulk.shape[1] != bulk.shape[2]:
            raise InvalidInputError(f"Bulk tensor must have shape (d, k, k), got {bulk.shape}")
        if n < 2:
            raise InvalidInputError(f"A chain needs at least two sites, got {n}")

        k = bulk.shape[1]
        left = np.eye(k, dtype=complex)[0] if left is None else np.asarray(left, dtype=complex)
        right = np.eye(k, dtype=complex)[0] if right is None else np.asarray(right, dtype=complex)

        if manifestly_hermitian:
            d = bulk.shape[0]
            if d % 2:
                raise InvalidInputError(f"A manifestly Hermitian chain needs even d, got {d}")
            half = d // 2
            defect = np.abs(bulk[half:] - bulk[:half].conj().transpose(0, 2, 1)).max()
            if defect > HERMITIAN_KRAUS_TOL:
                raise InvalidInputError(f"Bulk is not closed under adjoints: defect {defect:.3e}")

        first = np.einsum("a,sab->sb", left, bulk)[:, None, :]
        last = np.einsum("sab,b->sa", bulk, right)[:, :, None]
        chain = cls([first, *([bulk] * (n - 2)), last], manifestly_hermitian=manifestly_hermitian)
        chain._bulk = bulk
        chain._left = left
        chain._right = right
        return chain

    @property
    def is_uniform(self) -> bool:
        return self._bulk is not None

    @property
    def bulk(self) -> np.ndarray:
        if self._bulk is None:
            raise UnsupportedError("Chain has no uniform bulk")
        return self._bulk

    @property
    def k(self) -> int:
        return max(site.shape[2] for site in self.sites[:-1])

    def gauge(self, x: np.ndarray) -> MPSChain:
        """Apply the gauge transformation ``A(s) -> X^-1 A(s) X`` with matching boundaries."""
        x = as_matrix(x, square=True)
        x_inv = np.linalg.inv(x)
        bulk = np.einsum("ab,sbc,cd->sad", x_inv, self.bulk, x)
        return MPSChain.uniform(
            bulk,
            self.N,
            left=self._left @ x,
            right=x_inv @ self._right,
            manifestly_hermitian=False,
        )

    def amplitude(self, config: Sequence[int]) -> complex:
        if len(config) != self.N:
            raise InvalidInputError(f"Configuration has {len(config)} sites, expected {self.N}")

        m = self.sites[0][config[0]]
        for site, s in zip(self.sites[1:], config[1:]):
            m = m @ site[s]
        return complex(m[0, 0])

    @cached_property
    def left_environments(self) -> list[np.ndarray]:
        """``left_environments[j]`` is the environment after the first ``j`` sites."""
        envs = [np.ones((1, 1), dtype=complex)]
        for site in self.sites:
            envs.append(_step_left(envs[-1], site))
        return envs

    @cached_property
    def right_environments(self) -> list[np.ndarray]:
        """``right_environments[j]`` is the environment of sites ``j..N`` (1-based), index ``N + 1`` is trivial."""
        envs = [np.ones((1, 1), dtype=complex)]
        for site in reversed(self.sites):
            envs.append(_step_right(envs[-1], site))
        envs.append(None)
        envs.reverse()
        # envs[0] is a placeholder so that indices are 1-based site numbers
        return envs

    def norm(self) -> float:
        """Squared norm of the state, by a left to right sweep."""
        return float(self.left_environments[-1][0, 0].real)

    def norm_by_transfer(self) -> float:
        """Squared norm of a uniform chain from powers of the unnormalized transfer matrix."""
        bulk = self.bulk
        rep = transfer_matrix(bulk)
        rho = np.einsum("sba,b,c,scd->ad", bulk.conj(), self._left.conj(), self._left, bulk)
        vec = np.linalg.matrix_power(rep, self.N - 2) @ rho.ravel()
        rho = vec.reshape(rho.shape)
        tail = np.einsum("sab,b,c,sdc->ad", bulk, self._right, self._right.conj(), bulk.conj())
        return float(np.trace(rho @ tail).real)

    def norm_by_enumeration(self) -> float:
        """Squared norm as the sum of all squared amplitudes."""
        if self.d**self.N > MAX_ENUMERATION:
            raise TooLargeError(f"Refusing to enumerate {self.d}^{self.N} configurations")
        return float(
            sum(abs(self.amplitude(config)) ** 2 for config in itertools.product(range(self.d), repeat=self.N))
        )

    def block(self, first: int, last: int) -> np.ndarray:
        """Products of the site matrices of sites ``first..last`` for every configuration, row-major."""
        out = self.sites[first - 1]
        for site in self.sites[first:last]:
            out = np.einsum("sab,tbc->stac", out, site)
            out = out.reshape(-1, out.shape[2], out.shape[3])
        return out

    def expectation(self, blocks: Sequence[tuple[np.ndarray, int, int]]) -> complex:
        """Unnormalized expectation value of a product of operators on disjoint ordered intervals."""
        blocks = sorted(blocks, key=lambda item: item[1])
        position = blocks[0][1] - 1
        env = self.left_environments[position]
        for op, first, last in blocks:
            if first <= position:
                raise InvalidInputError("Operator supports overlap")
            for site in self.sites[position : first - 1]:
                env = _step_left(env, site)
            env = _insert_left(env, op, self.block(first, last))
            position = last
        return complex(np.trace(env @ self.right_environments[position + 1]))


def _step_left(env: np.ndarray, site: np.ndarray) -> np.ndarray:
    return np.einsum("sba,bc,scd->ad", site.conj(), env, site)


def _step_right(env: np.ndarray, site: np.ndarray) -> np.ndarray:
    return np.einsum("sab,bc,sdc->ad", site, env, site.conj())


def _insert_left(env: np.ndarray, op: np.ndarray, block: np.ndarray) -> np.ndarray:
    # rho' = sum_{s,t} O[s,t] B(s)^H rho B(t)
    weighted = np.einsum("st,tbc->sbc", op, np.einsum("ab,tbc->tac", env, block))
    return np.einsum("sba,sbc->ac", block.conj(), weighted)


def _insert_right(env: np.ndarray, op: np.ndarray, block: np.ndarray) -> np.ndarray:
    # sigma' = sum_{s,t} O[s,t] B(t) sigma B(s)^H
    weighted = np.einsum("st,tab->sab", op, np.einsum("tab,bc->tac", block, env))
    return np.einsum("sab,scb->ac", weighted, block.conj())


def transfer_matrix(kraus: np.ndarray) -> np.ndarray:
    """Row-major matrix of ``rho -> sum_s A(s)^H rho A(s)``, that is ``sum_s A(s)^H (x) A(s)^T``."""
    k = kraus.shape[1]
    return np.einsum("sba,sdc->acbd", kraus.conj(), kraus).reshape(k * k, k * k)


@dataclass(frozen=True)
class TransferOperator:
    kraus: np.ndarray
    matrix_rep: np.ndarray
    spectrum: np.ndarray
    scale: float
    fixed_point: np.ndarray
    hermitian: bool

    @property
    def raw_spectrum(self) -> np.ndarray:
        return self.spectrum * self.scale

    @property
    def lam(self) -> float:
        """Modulus of the second eigenvalue of the normalized operator."""
        return float(abs(self.spectrum[1])) if len(self.spectrum) > 1 else 0.0

    @property
    def correlation_length(self) -> float:
        if self.lam == 0.0:
            return 0.0
        if self.lam >= 1.0:
            return math.inf
        return -1.0 / math.log(self.lam)

    def apply(self, rho: np.ndarray) -> np.ndarray:
        return np.einsum("sba,bc,scd->ad", self.kraus.conj(), rho, self.kraus) / self.scale

    @property
    def fixed_point_defect(self) -> float:
        return operator_norm(self.apply(self.fixed_point) - self.fixed_point)


def transfer_operator(kraus: np.ndarray, *, hermitian: bool = False) -> TransferOperator:
    kraus = np.asarray(kraus, dtype=complex)
    k = kraus.shape[1]
    rep = transfer_matrix(kraus)

    if hermitian:
        values, vectors = np.linalg.eigh((rep + rep.conj().T) / 2)
        values = values.astype(complex)
    else:
        values, vectors = np.linalg.eig(rep)

    order = np.argsort(-np.abs(values), kind="stable")
    values = values[order]
    vectors = vectors[:, order]

    scale = float(abs(values[0]))
    if scale == 0.0:
        raise InvalidInputError("Transfer operator is nilpotent")

    fixed = vectors[:, 0].reshape(k, k)
    trace = np.trace(fixed)
    anchor = trace if abs(trace) > 1e-12 else fixed.ravel()[np.argmax(np.abs(fixed))]
    fixed = fixed * (abs(anchor) / anchor)
    fixed = fixed / np.sqrt(np.trace(fixed.conj().T @ fixed).real)

    return TransferOperator(kraus, rep, values / scale, scale, fixed, hermitian)


def transfer_spectrum(chain: MPSChain) -> TransferOperator:
    if not chain.is_uniform:
        raise UnsupportedError("Transfer spectrum needs a uniform bulk")

    op = transfer_operator(chain.bulk, hermitian=chain.manifestly_hermitian)
    if chain.manifestly_hermitian:
        defect = float(np.abs(op.matrix_rep - op.matrix_rep.conj().T).max())
        log.debug("Manifestly Hermitian transfer matrix, Hermiticity defect %.3e", defect)
    log.debug("Transfer spectrum: scale %.6g, lambda %.6g", op.scale, op.lam)
    return op


def build_expander_mps(k: int, d: int, n: int, seed: SeedLike = None, *, boundary_seed: SeedLike = None) -> MPSChain:
    """Build a uniform chain from random unitaries closed under adjoints.

    The bulk is ``A(s) = U_s / sqrt(d)`` for ``s < d/2`` with Haar distributed ``U_s`` and ``A(s + d/2) = A(s)^H``, so
    the transfer operator is unital and Hermitian. Boundaries are ``e_1`` unless ``boundary_seed`` is given, in which
    case random unit vectors are drawn.
    """
    if d % 2:
        raise InvalidInputError(f"Physical dimension must be even, got {d}")
    if k < 2 or n < 4 or d < 2:
        raise InvalidInputError(f"Need k >= 2, d >= 2 and N >= 4, got k={k}, d={d}, N={n}")
    if k > MAX_BOND or d > MAX_PHYSICAL or n > MAX_SITES:
        raise TooLargeError(f"Chain k={k}, d={d}, N={n} exceeds k <= {MAX_BOND}, d <= {MAX_PHYSICAL}, N <= {MAX_SITES}")

    rng = rng_from(seed)
    half = [haar_unitary(k, rng) / np.sqrt(d) for _ in range(d // 2)]
    bulk = np.stack(half + [a.conj().T for a in half])

    left = right = None
    if boundary_seed is not None:
        brng = rng_from(boundary_seed)
        left, right = (v / np.linalg.norm(v) for v in brng.standard_normal((2, k)) + 1j * brng.standard_normal((2, k)))

    return MPSChain.uniform(bulk, n, left=left, right=right, manifestly_hermitian=True)


@dataclass(frozen=True)
class CorrelationResult:
    """Connected correlator together with its decay bound.

    ``lambda_a`` and ``lambda_b`` are the unnormalized environments carrying the two operators: ``lambda_a`` is the
    left environment just after the support of A, ``lambda_b`` the right environment just before the support of B.
    """

    value: complex
    bound: float
    lambda_a: np.ndarray
    lambda_b: np.ndarray
    separation: int
    lam: float
    tail: float
    folded_lambda: float | None = None

    @property
    def within_bound(self) -> bool:
        return abs(self.value) <= self.bound + self.tail


def _interval(sites: Sites, n: int) -> tuple[int, int]:
    first, last = (sites, sites) if isinstance(sites, int) else sites
    if not 1 <= first <= last <= n:
        raise InvalidInputError(f"Interval {first}..{last} is not inside 1..{n}")
    return first, last


def _operator(op: np.ndarray, first: int, last: int, d: int) -> np.ndarray:
    op = as_matrix(op, square=True)
    size = d ** (last - first + 1)
    if op.shape[0] != size:
        raise InvalidInputError(f"Operator on sites {first}..{last} must be {size}x{size}, got {op.shape}")
    return op


def connected_correlation(
    chain: MPSChain, a: np.ndarray, a_sites: Sites, b: np.ndarray, b_sites: Sites
) -> CorrelationResult:
    """Connected correlator of A on ``[P, Q]`` and B on ``[R, S]`` with ``Q < R``.

    Sites are 1-based and inclusive, a bare integer is a single site. The bound is ``|A| |B| lambda^(R - Q)``, and
    ``tail`` is the allowance ``10 lambda^min(P - 1, N - S)`` for boundary effects.
    """
    p, q = _interval(a_sites, chain.N)
    r, s = _interval(b_sites, chain.N)
    if not q < r:
        raise InvalidInputError(f"Supports [{p},{q}] and [{r},{s}] overlap or are out of order")

    a = _operator(a, p, q, chain.d)
    b = _operator(b, r, s, chain.d)

    left = chain.left_environments
    right = chain.right_environments

    norm = left[-1][0, 0]
    lambda_a = _insert_left(left[p - 1], a, chain.block(p, q))
    lambda_b = _insert_right(right[s + 1], b, chain.block(r, s))

    env = lambda_a
    for site in chain.sites[q : r - 1]:
        env = _step_left(env, site)

    ev_a = np.trace(lambda_a @ right[q + 1]) / norm
    ev_b = np.trace(left[r - 1] @ lambda_b) / norm
    ev_ab = np.trace(env @ lambda_b) / norm

    lam = transfer_spectrum(chain).lam
    bound = operator_norm(a) * operator_norm(b) * lam ** (r - q)
    tail = TAIL_CONSTANT * lam ** min(p - 1, chain.N - s)

    return CorrelationResult(
        value=complex(ev_ab - ev_a * ev_b),
        bound=bound,
        lambda_a=lambda_a,
        lambda_b=lambda_b,
        separation=r - q,
        lam=lam,
        tail=tail,
    )


def operator_schmidt(
    op: np.ndarray, left_dim: int, right_dim: int, *, tol: float = 1e-14
) -> list[tuple[float, np.ndarray, np.ndarray]]:
    """Decompose an operator on a bipartite space as ``sum_r sigma_r L_r (x) R_r``."""
    m = op.reshape(left_dim, right_dim, left_dim, right_dim).transpose(0, 2, 1, 3).reshape(left_dim**2, right_dim**2)
    u, sigma, vh = np.linalg.svd(m)
    return [
        (float(sigma[i]), u[:, i].reshape(left_dim, left_dim), vh[i].reshape(right_dim, right_dim))
        for i in range(len(sigma))
        if sigma[i] > tol * max(sigma[0], 1.0)
    ]


def two_interval_correlation(
    chain: MPSChain,
    a: np.ndarray,
    a_sites: Sites,
    b: np.ndarray,
    b_sites1: Sites | None,
    b_sites2: Sites,
) -> CorrelationResult:
    """Connected correlator of A on ``[P, Q]`` and B on ``[R1, S1] u [R2, S2]`` with ``S1 < P <= Q < R2``.

    B is split into a sum of products over its two intervals, so each term is an ordered product of three disjoint
    operators. Passing ``b_sites1=None`` means B lives on ``[R2, S2]`` only.

    The decay of such correlators is governed by the chain folded at A, whose transfer operator has Kraus operators
    ``A(s)^T (x) A(t)`` and spectrum the pairwise products of the spectrum of the unfolded one. Its second eigenvalue
    modulus is reported as ``folded_lambda``. ``lambda_b`` is the right environment of the dominant product term.
    """
    if b_sites1 is None:
        result = connected_correlation(chain, a, a_sites, b, b_sites2)
        folded = _folded_lambda(transfer_spectrum(chain))
        return replace(result, folded_lambda=folded)

    p, q = _interval(a_sites, chain.N)
    r1, s1 = _interval(b_sites1, chain.N)
    r2, s2 = _interval(b_sites2, chain.N)
    if not s1 < p <= q < r2:
        raise InvalidInputError(f"Need S1 < P <= Q < R2, got [{r1},{s1}], [{p},{q}], [{r2},{s2}]")

    a = _operator(a, p, q, chain.d)
    dim1 = chain.d ** (s1 - r1 + 1)
    dim2 = chain.d ** (s2 - r2 + 1)
    b = as_matrix(b, square=True)
    if b.shape[0] != dim1 * dim2:
        raise InvalidInputError(f"Operator on two intervals must be {dim1 * dim2}x{dim1 * dim2}, got {b.shape}")

    norm = chain.norm()
    terms = operator_schmidt(b, dim1, dim2)

    ev_a = chain.expectation([(a, p, q)]) / norm
    ev_b = 0.0
    ev_ab = 0.0
    for sigma, first, second in terms:
        ev_b += sigma * chain.expectation([(first, r1, s1), (second, r2, s2)]) / norm
        ev_ab += sigma * chain.expectation([(first, r1, s1), (a, p, q), (second, r2, s2)]) / norm

    op = transfer_spectrum(chain)
    folded = _folded_lambda(op)
    bound = operator_norm(a) * operator_norm(b) * folded ** min(p - s1, r2 - q)
    tail = TAIL_CONSTANT * op.lam ** min(r1 - 1, chain.N - s2)

    _, _, second = terms[0]
    lambda_a = _insert_left(chain.left_environments[p - 1], a, chain.block(p, q))
    lambda_b = _insert_right(chain.right_environments[s2 + 1], second, chain.block(r2, s2))

    return CorrelationResult(
        value=complex(ev_ab - ev_a * ev_b),
        bound=bound,
        lambda_a=lambda_a,
        lambda_b=lambda_b,
        separation=min(p - s1, r2 - q),
        lam=op.lam,
        tail=tail,
        folded_lambda=folded,
    )


def _folded_lambda(op: TransferOperator) -> float:
    spectrum = _product_spectrum(op.spectrum)
    return float(np.sort(np.abs(spectrum))[-2])


def _product_spectrum(spectrum: np.ndarray) -> np.ndarray:
    return np.outer(spectrum, spectrum).ravel()


@dataclass(frozen=True)
class FoldedSpectrum:
    explicit: np.ndarray
    products: np.ndarray
    distance: float

    @property
    def lam(self) -> float:
        return float(np.sort(np.abs(self.explicit))[-2])


def folded_transfer_spectrum(chain: MPSChain) -> FoldedSpectrum:
    """Build the transfer operator of the folded chain explicitly and compare it with products of the unfolded one."""
    bulk = chain.bulk
    k = bulk.shape[1]
    if k > MAX_FOLDED_BOND:
        raise TooLargeError(f"Folded transfer operator for k={k} exceeds k <= {MAX_FOLDED_BOND}")

    folded = np.einsum("sba,tcd->stacbd", bulk, bulk).reshape(chain.d**2, k * k, k * k)
    op = transfer_operator(folded)
    products = _product_spectrum(transfer_operator(bulk).spectrum)

    cost = np.abs(op.spectrum[:, None] - products[None, :])
    rows, cols = linear_sum_assignment(cost)
    distance = float(cost[rows, cols].max())
    log.debug("Folded spectrum of size %d matches products within %.3e", len(products), distance)
    return FoldedSpectrum(op.spectrum, products, distance)
