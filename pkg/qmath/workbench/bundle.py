from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import TYPE_CHECKING, Callable, Union

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import LinearOperator, eigsh

from qmath.workbench.exceptions import (
    CutCollisionError,
    GridTooCoarseError,
    InvalidInputError,
    OutOfRegimeError,
    TooLargeError,
    UnsupportedError,
)
from qmath.workbench.linalg import JointEigenbasis, as_matrix, joint_diagonalize, matrix_to_json, operator_norm
from qmath.workbench.softtorus import GOLDEN, MAX_DENSE, DilatedProjector, LocalProjector

if TYPE_CHECKING:
    from collections.abc import Iterator, Sequence

    from qmath.workbench.symmetry import SymmetryClass

log = logging.getLogger(__name__)

MAX_CHERN_DEGREE = 3
CHERN_RESIDUAL = 0.05
SPECTRAL_GAP = 0.1
CUT_CLEARANCE = 1e-6
MAX_ROTATIONS = 64
EXTRA_EIGENVALUES = 4
FILTER_PLATEAU = 0.95

FrameFn = Callable[[np.ndarray], np.ndarray]


class ProjectorField:
    """A projector valued function on the ``d``-torus, with angles of period ``2 pi``.

    The field is given by ``frame_fn``, which returns a matrix of orthonormal columns spanning the range of
    ``E(theta)``. Frames are evaluated lazily and not cached; only the rank at ``theta = 0`` is remembered. ``source``
    keeps the object the field was built from, such as the strictly local operator behind a map_B field.
    """

    def __init__(self, d: int, dim: int, frame_fn: FrameFn, *, name: str = "", source: object = None):
        self.d = d
        self.dim = dim
        self.frame_fn = frame_fn
        self.name = name
        self.source = source

    def __repr__(self) -> str:
        return f"<ProjectorField {self.name!r} d={self.d} dim={self.dim}>"

    @classmethod
    def from_projector(cls, d: int, dim: int, projector_fn: FrameFn, *, name: str = "") -> ProjectorField:
        def frame(theta: np.ndarray) -> np.ndarray:
            values, vectors = np.linalg.eigh(as_matrix(projector_fn(theta), square=True))
            return vectors[:, values > 0.5]

        return cls(d, dim, frame, name=name)

    def frame(self, theta: Sequence[float]) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.d,):
            raise InvalidInputError(f"Expected {self.d} angles, got shape {theta.shape}")
        return self.frame_fn(theta)

    def projector(self, theta: Sequence[float]) -> np.ndarray:
        if self.dim > MAX_DENSE:
            raise TooLargeError(f"Fiber dimension {self.dim} exceeds {MAX_DENSE}")
        f = self.frame(theta)
        return f @ f.conj().T

    @cached_property
    def rank(self) -> int:
        return self.frame(np.zeros(self.d)).shape[1]

    def grid(self, m: int) -> Iterator[tuple[tuple[int, ...], np.ndarray]]:
        """Grid indices and angles ``2 pi k / m``, last angle fastest."""
        for k in itertools.product(range(m), repeat=self.d):
            yield k, 2 * np.pi * np.asarray(k, dtype=float) / m

    def lipschitz(self, m: int = 64, step: float = 1e-5) -> float:
        """Estimate of ``K`` with ``|E(theta) - E(theta')| <= K |theta - theta'|``.

        Largest of the difference quotients between grid neighbours and the derivative norms along each axis,
        sampled on an ``m``-point grid.
        """
        value = 0.0
        spacing = 2 * np.pi / m
        for _, theta in self.grid(m):
            e = self.projector(theta)
            for j in range(self.d):
                shift = np.zeros(self.d)
                shift[j] = step
                value = max(value, operator_norm(self.projector(theta + shift) - e) / step)
                shift[j] = spacing
                value = max(value, operator_norm(self.projector(theta + shift) - e) / spacing)
        return value

    def direct_sum(self, other: ProjectorField) -> ProjectorField:
        if self.d != other.d:
            raise InvalidInputError(f"Cannot add fields over tori of dimension {self.d} and {other.d}")

        def frame(theta: np.ndarray) -> np.ndarray:
            return scipy.linalg.block_diag(self.frame(theta), other.frame(theta))

        return ProjectorField(self.d, self.dim + other.dim, frame, name=f"{self.name}+{other.name}")

    def to_json(self, m: int) -> list[dict]:
        return [
            {"theta": theta.tolist(), "projector": matrix_to_json(self.projector(theta))} for _, theta in self.grid(m)
        ]


def _pauli_projector(n: np.ndarray, dim: int) -> np.ndarray:
    n = n / np.linalg.norm(n)
    e = 0.5 * np.array([[1 + n[2], n[0] - 1j * n[1]], [n[0] + 1j * n[1], 1 - n[2]]])
    out = np.zeros((dim, dim), dtype=complex)
    out[:2, :2] = e
    return out


def make_test_bundle(c: int, dim: int = 2) -> ProjectorField:
    """Rank one field ``(I + n . sigma) / 2`` over the 2-torus with Chern number ``c``.

    ``n`` is the normalization of ``(sin c t1, -sin t2, 1 + cos c t1 + cos t2)``, which never vanishes and wraps the
    sphere ``c`` times. For ``c = 0`` the field is the constant projector on the first coordinate. Fibers of
    dimension above 2 are padded with zeros.
    """
    if abs(c) > MAX_CHERN_DEGREE:
        raise InvalidInputError(f"Test bundles have |c| <= {MAX_CHERN_DEGREE}, got {c}")
    if dim < 2:
        raise InvalidInputError(f"Fiber dimension must be at least 2, got {dim}")

    def vector(theta: np.ndarray) -> np.ndarray:
        if c == 0:
            return np.array([0.0, 0.0, 1.0])
        t1, t2 = theta
        return np.array([np.sin(c * t1), -np.sin(t2), 1 + np.cos(c * t1) + np.cos(t2)])

    return ProjectorField.from_projector(2, dim, lambda theta: _pauli_projector(vector(theta), dim), name=f"test({c})")


def chern_number(field: ProjectorField, m: int = 24) -> int:
    """Chern number of a field over the 2-torus from lattice link variables on an ``m x m`` grid.

    Links are the phases of ``det(F(k)^H F(k'))`` between neighbouring frames, the plaquette flux is the principal
    angle of the product of its four links, and the fluxes sum to ``2 pi`` times the Chern number.
    """
    if field.d != 2:
        raise UnsupportedError(f"Chern numbers are only computed over the 2-torus, got d={field.d}")
    if m < 2:
        raise InvalidInputError(f"Grid needs at least 2 points per angle, got {m}")

    angles = 2 * np.pi * np.arange(m) / m

    def row(i: int) -> list[np.ndarray]:
        frames = [field.frame(np.array([angles[i], angles[j]])) for j in range(m)]
        if len({f.shape[1] for f in frames}) != 1:
            raise InvalidInputError(f"Rank of the field is not constant along row {i}")
        return frames

    def link(a: np.ndarray, b: np.ndarray) -> complex:
        sign, logabs = np.linalg.slogdet(a.conj().T @ b)
        if not np.isfinite(logabs):
            raise GridTooCoarseError("Neighbouring frames are orthogonal, refine the grid")
        return complex(sign)

    first = row(0)
    current = first
    total = 0.0
    for i in range(m):
        upper = row(i + 1) if i + 1 < m else first
        if upper[0].shape[1] != current[0].shape[1]:
            raise InvalidInputError("Rank of the field is not constant")
        for j in range(m):
            jn = (j + 1) % m
            loop = (
                link(current[j], upper[j])
                * link(upper[j], upper[jn])
                * link(upper[jn], current[jn])
                * link(current[jn], current[j])
            )
            total += float(np.angle(loop))
        current = upper

    value = total / (2 * np.pi)
    rounded = round(value)
    if abs(value - rounded) >= CHERN_RESIDUAL:
        raise GridTooCoarseError(f"Flux sum {value:.4f} is not close to an integer")
    log.debug("Chern number of %r on a %d grid: %.6f", field, m, value)
    return int(rounded)


def map_A(field: ProjectorField, n: int) -> LocalProjector:
    """Discretize a field on an ``n^d`` grid into a local projector.

    The space is ``C^(n^d)`` tensored with the fiber, grid index ``n_1`` slowest. ``U_i`` shifts ``n_i`` by one
    modulo ``n`` and the projector is ``E(2 pi k / n)`` on grid point ``k``. Its commutator with ``U_i`` is the
    largest difference of neighbouring fibers along axis ``i``, at most ``2 pi K / n``. The Fourier basis diagonalizes
    all shifts and is attached as the joint eigenbasis.
    """
    if n < 3:
        raise InvalidInputError(f"Grid needs at least 3 points per angle, got {n}")

    d = field.d
    sites = n**d
    if sites * field.dim > MAX_DENSE:
        raise TooLargeError(f"Discretized space of dimension {sites * field.dim} exceeds {MAX_DENSE}")

    shift = np.roll(np.eye(n), 1, axis=0)
    fiber = np.eye(field.dim)
    us = []
    for i in range(d):
        factors = [np.eye(n)] * d
        factors[i] = shift
        u = factors[0]
        for f in factors[1:]:
            u = np.kron(u, f)
        us.append(np.kron(u, fiber).astype(complex))

    blocks = [field.projector(theta) for _, theta in field.grid(n)]
    p = scipy.linalg.block_diag(*blocks)

    fourier = np.exp(2j * np.pi * np.outer(np.arange(n), np.arange(n)) / n) / np.sqrt(n)
    basis = fourier
    for _ in range(d - 1):
        basis = np.kron(basis, fourier)
    basis = np.kron(basis, fiber)

    ks = np.array(list(itertools.product(range(n), repeat=d)))
    phases = tuple(np.repeat(np.mod(-2 * np.pi * ks[:, i] / n, 2 * np.pi), field.dim) for i in range(d))
    return LocalProjector(us, p, eigenbasis=JointEigenbasis(basis, phases), check=False)


def map_A_symmetry_defect(field: ProjectorField, n: int) -> float:
    """Transpose defect of the discretized projector in the Fourier basis.

    The Fourier basis is a symmetric matrix, and a field with ``E(theta) = E(-theta)^T`` gives a symmetric
    projector in it.
    """
    p = map_A(field, n)
    m = p.eigenbasis.to_basis(p.projector)
    return operator_norm(m - m.T)


def field_symmetry_defect(field: ProjectorField, cls: SymmetryClass, m: int = 8) -> float:
    """Largest ``|E(theta) - C(E(-theta))|`` on the grid, ``C`` the class involution."""
    return max(
        operator_norm(field.projector(theta) - cls.conjugate(field.projector(-theta))) for _, theta in field.grid(m)
    )


def _smooth_step(t: np.ndarray) -> np.ndarray:
    """Smooth transition from 0 for ``t <= 0`` to 1 for ``t >= 1``."""
    t = np.clip(t, 0.0, 1.0)
    rise = np.exp(-1.0 / np.where(t > 0, t, 1.0)) * (t > 0)
    fall = np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)) * (t < 1)
    return rise / (rise + fall)


def plateau_filter(w: np.ndarray, plateau: float = FILTER_PLATEAU) -> np.ndarray:
    """Smooth even filter, 1 on ``|w| <= plateau`` and 0 on ``|w| >= 1``.

    Matrix elements between eigenvalues closer than ``plateau * S`` pass unchanged, so ``H`` agrees with ``P`` on
    every coupling well inside the locality radius.
    """
    if not 0 <= plateau < 1:
        raise InvalidInputError(f"Filter plateau must lie in [0, 1), got {plateau}")
    w = np.asarray(w, dtype=float)
    return _smooth_step((1.0 - np.abs(w)) / (1.0 - plateau))


def _rotation(phases: Sequence[np.ndarray]) -> tuple[float, ...]:
    """Global phase per unitary moving every eigenvalue at least ``CUT_CLEARANCE`` away from 1."""
    for attempt in range(MAX_ROTATIONS):
        shifts = tuple(2 * np.pi * (((attempt * len(phases) + j) * GOLDEN) % 1.0) for j in range(len(phases)))
        clearance = min(
            float(np.min(np.minimum(np.mod(phi + s, 2 * np.pi), 2 * np.pi - np.mod(phi + s, 2 * np.pi))))
            for phi, s in zip(phases, shifts)
        )
        if clearance > CUT_CLEARANCE:
            return shifts
    raise CutCollisionError(f"No rotation clears the cut after {MAX_ROTATIONS} attempts")


def _windings(phases: np.ndarray, shift: float) -> np.ndarray:
    """``w[a, b]`` is +1 (-1) when the shortest arc from eigenvalue ``b`` to ``a`` crosses the cut upwards (down)."""
    rotated = np.mod(phases + shift, 2 * np.pi)
    arc = np.mod(rotated[:, None] - rotated[None, :] + np.pi, 2 * np.pi) - np.pi
    return np.rint((rotated[None, :] + arc - rotated[:, None]) / (2 * np.pi)).astype(np.int8)


def _filter_weights(phases: Sequence[np.ndarray], cutoff: float) -> np.ndarray:
    weights = 1.0
    for phi in phases:
        x, y = np.cos(phi), np.sin(phi)
        weights = weights * plateau_filter((x[:, None] - x[None, :]) / cutoff)
        weights = weights * plateau_filter((y[:, None] - y[None, :]) / cutoff)
    return weights


def _check_radius(radius: float) -> float:
    if not 0 < radius <= np.pi / 2:
        raise InvalidInputError(f"Locality radius must lie in (0, pi/2], got {radius}")
    return math.sqrt(2) * math.sin(radius / 2)


@dataclass
class StrictlyLocalOp:
    """A Hermitian operator written in a joint eigenbasis of commuting unitaries, vanishing between far eigenvalues.

    Matrix elements between joint eigenvectors whose eigenvalues of some ``U_i`` differ by ``cutoff`` or more in the
    real or the imaginary part are exactly zero. ``windings[i]`` holds the cut crossings used by :meth:`twist`, and
    ``rotation[i]`` is the global phase applied to ``U_i`` before locating the cut at 1.
    """

    matrix: np.ndarray
    basis: JointEigenbasis
    windings: tuple[np.ndarray, ...]
    rotation: tuple[float, ...]
    radius: float
    cutoff: float
    error: float

    @property
    def d(self) -> int:
        return len(self.windings)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def twist(self, theta: Sequence[float]) -> np.ndarray:
        return twist(self, theta)

    def dense(self) -> np.ndarray:
        """The operator in the original basis."""
        return self.basis.from_basis(self.matrix)


@dataclass
class DilatedLocalOp:
    """Strictly local version of a dilated projector, never materialized.

    The dilation space has blocks indexed by outcomes ``o`` and the operator is ``A_o^H A_o' k(o, o')`` with the
    outcome kernel ``k`` holding the filter weights. Twisting multiplies the kernel by the crossing phases.
    """

    factors: np.ndarray
    kernel: np.ndarray
    windings: tuple[np.ndarray, ...]
    rotation: tuple[float, ...]
    radius: float
    cutoff: float
    error: float

    @property
    def d(self) -> int:
        return len(self.windings)

    @property
    def outcomes(self) -> int:
        return self.factors.shape[0]

    @property
    def block(self) -> int:
        return self.factors.shape[1]

    @property
    def dim(self) -> int:
        return self.outcomes * self.block

    def operator(self, kernel: np.ndarray | None = None) -> LinearOperator:
        kernel = self.kernel if kernel is None else kernel
        factors = self.factors
        adjoints = factors.conj().transpose(0, 2, 1)

        def matvec(x: np.ndarray) -> np.ndarray:
            x = np.asarray(x, dtype=complex).reshape(self.outcomes, self.block)
            y = np.einsum("oab,ob->oa", factors, x)
            return np.einsum("oab,ob->oa", adjoints, kernel @ y).ravel()

        return LinearOperator((self.dim, self.dim), matvec=matvec, rmatvec=matvec, dtype=complex)

    def twist(self, theta: Sequence[float]) -> LinearOperator:
        return twist(self, theta)


LocalOp = Union[StrictlyLocalOp, DilatedLocalOp]


def strictly_localize(p: LocalProjector | DilatedProjector, radius: float = np.pi / 4) -> LocalOp:
    """Filter a local projector into a strictly local Hermitian operator.

    is multiplied by ``prod_j f(dx_j / S) f(dy_j / S)`` with ``f`` the plateau filter and ``S = sqrt(2) sin(R / 2)``.
    is multiplied by ``prod_j f(dx_j / S) f(dy_j / S)`` with the bump filter ``f`` and ``S = sqrt(2) sin(R / 2)``.
    Eigenvalues at angular distance ``R`` or more then differ by at least ``S`` in one coordinate, so the filtered
    elements between them vanish. The distance ``|H - P|`` is recorded as ``error``.
    """
    cutoff = _check_radius(radius)

    if isinstance(p, DilatedProjector):
        povm = p.povm
        phases = [np.mod(phi.ravel(), 2 * np.pi) for phi in p.phases]
        factors = np.stack([povm.factor(o) for o in povm.outcomes()])
        kernel = _filter_weights(phases, cutoff).astype(complex)
        rotation = _rotation(phases)
        windings = tuple(_windings(phi, s) for phi, s in zip(phases, rotation))
        op = DilatedLocalOp(factors, kernel, windings, rotation, radius, cutoff, math.nan)

        difference = op.operator(kernel - 1.0)
        values = eigsh(difference, k=1, which="LM", v0=np.ones(op.dim), return_eigenvectors=False)
        op.error = float(np.abs(values).max())
        log.debug("Dilated strictly local operator: %d outcomes, |H - P| = %.4g", op.outcomes, op.error)
        return op

    basis = p.eigenbasis if p.eigenbasis is not None else joint_diagonalize(p.unitaries)
    phases = list(basis.phases)
    projector = basis.to_basis(p.projector)
    matrix = projector * _filter_weights(phases, cutoff)
    matrix = (matrix + matrix.conj().T) / 2

    error = float(np.abs(np.linalg.eigvalsh(matrix - projector)).max())
    rotation = _rotation(phases)
    windings = tuple(_windings(phi, s) for phi, s in zip(phases, rotation))
    log.debug("Strictly local operator of dimension %d, |H - P| = %.4g", matrix.shape[0], error)
    return StrictlyLocalOp(matrix, basis, windings, rotation, radius, cutoff, error)


def _twist_factors(h: LocalOp, theta: Sequence[float]) -> np.ndarray | None:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (h.d,):
        raise InvalidInputError(f"Expected {h.d} twist angles, got shape {theta.shape}")
    if not theta.any():
        return None
    exponent = sum(t * w for t, w in zip(theta, h.windings))
    return np.exp(1j * exponent)


def twist(h: LocalOp, theta: Sequence[float]) -> np.ndarray | LinearOperator:
    """The operator with twisted boundary conditions.

    Each matrix element is multiplied by ``exp(i sum_j theta_j w_j)`` with ``w_j`` the signed number of times the
    shortest arc between the two eigenvalues of ``U_j`` crosses the cut. Twists compose additively in ``theta``.
    """
    factors = _twist_factors(h, theta)
    if isinstance(h, DilatedLocalOp):
        return h.operator(h.kernel if factors is None else h.kernel * factors)
    return h.matrix.copy() if factors is None else h.matrix * factors


def commutator_bound_check(h: StrictlyLocalOp, theta: Sequence[float]) -> float:
    """``max_i |[H(theta), U_i]|``, computed in the joint eigenbasis where the ``U_i`` are diagonal."""
    ht = twist(h, theta)
    value = 0.0
    for i in range(h.d):
        u = h.basis.eigenvalues(i)
        value = max(value, operator_norm(ht * (u[None, :] - u[:, None])))
    return value


def projector_defect(h: StrictlyLocalOp, theta: Sequence[float]) -> float:
    """``|H(theta)^2 - H(theta)|``."""
    ht = twist(h, theta)
    return operator_norm(ht @ ht - ht)


def _dense_frame(h: StrictlyLocalOp, theta: np.ndarray) -> np.ndarray:
    values, vectors = scipy.linalg.eigh(twist(h, theta), subset_by_value=(0.5 - SPECTRAL_GAP, np.inf))
    if (values < 0.5 + SPECTRAL_GAP).any():
        raise OutOfRegimeError(f"Spectrum of H(theta) comes within {SPECTRAL_GAP} of 1/2", theta=theta)
    return vectors


def _dilated_frame(h: DilatedLocalOp, theta: np.ndarray, rank_hint: int) -> np.ndarray:
    op = twist(h, theta)
    k = min(rank_hint + EXTRA_EIGENVALUES, h.dim - 1)
    while True:
        values, vectors = eigsh(op, k=k, which="LA", v0=np.ones(h.dim))
        if (np.abs(values - 0.5) < SPECTRAL_GAP).any():
            raise OutOfRegimeError(f"Spectrum of H(theta) comes within {SPECTRAL_GAP} of 1/2", theta=theta)
        if values.min() < 0.5 or k == h.dim - 1:
            return vectors[:, values > 0.5]
        k = min(2 * k, h.dim - 1)
        log.debug("All %d computed eigenvalues lie above 1/2, retrying with k=%d", len(values), k)


def map_B(
    p: LocalProjector | DilatedProjector, radius: float = np.pi / 4, m: int = 24, *, validate: bool = True
) -> ProjectorField:
    """The field of spectral projectors of ``H(theta)`` above 1/2, ``H`` the strictly local version of ``P``.

    Fibers live in the joint eigenbasis used to localize. The field is evaluated lazily; ``theta = 0`` is always
    checked, and with ``validate`` every point of the ``m^d`` grid is checked for the spectral gap and constant rank.
    Any eigenvalue of ``H(theta)`` within 0.1 of 1/2, or a change of rank, raises :class:`OutOfRegimeError` carrying
    the offending angles.
    """
    h = strictly_localize(p, radius)
    d = h.d

    if isinstance(h, DilatedLocalOp):
        rank_hint = h.block

        def frame(theta: np.ndarray) -> np.ndarray:
            return _dilated_frame(h, theta, rank_hint)

    else:

        def frame(theta: np.ndarray) -> np.ndarray:
            return _dense_frame(h, theta)

    rank = frame(np.zeros(d)).shape[1]

    def checked(theta: np.ndarray) -> np.ndarray:
        f = frame(theta)
        if f.shape[1] != rank:
            raise OutOfRegimeError(f"Rank changes from {rank} to {f.shape[1]}", theta=theta)
        return f

    field = ProjectorField(d, h.dim, checked, name=f"map_B(R={radius:.4g})", source=h)
    if validate:
        for _, theta in field.grid(m):
            checked(theta)
        log.info("map_B field validated on a %d^%d grid, rank %d", m, d, rank)
    return field
