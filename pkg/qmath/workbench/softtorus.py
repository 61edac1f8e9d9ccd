from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import TYPE_CHECKING, Any, Callable, Union

import numpy as np
from scipy.linalg import block_diag, expm

from qmath.workbench.exceptions import (
    InvalidInputError,
    InvalidPovmError,
    InvalidWindowError,
    OutOfRegimeError,
    RankDeficientError,
    TooLargeError,
)
from qmath.workbench.linalg import (
    HermitianEig,
    JointEigenbasis,
    SeedLike,
    as_matrix,
    commutator,
    haar_unitary,
    hermitian_eig,
    matrix_from_json,
    matrix_to_json,
    operator_norm,
    polar,
    rng_from,
    unitarity_defect,
)

if TYPE_CHECKING:
    from collections.abc import Iterator, Sequence

    from qmath.workbench.symmetry import SymmetryClass

log = logging.getLogger(__name__)

UNITARY_TOL = 1e-10
PROJECTOR_TOL = 1e-10
CERTIFICATE_TOL = 1e-10
SUM_RULE_TOL = 1e-12
COMPLETENESS_TOL = 1e-10
MAX_DENSE = 4000
MAX_INTERTWINER = 24
MAP_G_MAX_EPSILON = 0.6

# Perturbation of V_i = X'_i + i Y'_i before taking the polar part
PERTURBATION = 1e-6
PERTURBATION_MIN_SINGULAR = 1e-8
GOLDEN = (math.sqrt(5) - 1) / 2


def _unit_sequence() -> Iterator[complex]:
    """Deterministic sequence of points on the unit circle."""
    for j in itertools.count():
        yield complex(np.exp(2j * np.pi * ((j * GOLDEN) % 1.0)))


def _commutator_epsilon(us: Sequence[np.ndarray]) -> float:
    value = 0.0
    for a, b in itertools.combinations(us, 2):
        value = max(value, operator_norm(commutator(a, b)))
    return value


def _check_unitaries(unitaries: Sequence[Any]) -> list[np.ndarray]:
    us = [as_matrix(u, square=True) for u in unitaries]
    if not us:
        raise InvalidInputError("Need at least one unitary")
    if len({u.shape for u in us}) != 1:
        raise InvalidInputError("Unitaries have different dimensions")
    for i, u in enumerate(us):
        defect = unitarity_defect(u)
        if defect > UNITARY_TOL:
            raise InvalidInputError(f"Matrix {i} is not unitary: defect {defect:.3e}")
    return us


class SoftTorus:
    """A tuple of unitaries with a certified bound on their pairwise commutators.

    The stored ``epsilon`` is a certificate: it may exceed the true maximum commutator norm but never understate it.
    ``metadata`` records how the torus was obtained, e.g. a perturbation applied before taking polar parts.
    """

    def __init__(self, unitaries: Sequence[Any], epsilon: float | None = None, *, metadata: dict | None = None):
        self.unitaries = _check_unitaries(unitaries)
        measured = _commutator_epsilon(self.unitaries)
        if epsilon is None:
            epsilon = measured
        elif measured > epsilon + CERTIFICATE_TOL:
            raise InvalidInputError(f"Certificate {epsilon:.6g} understates the commutator norm {measured:.6g}")

        self.epsilon = float(epsilon)
        self.measured_epsilon = measured
        self.metadata = metadata or {}

    def __repr__(self) -> str:
        return f"<SoftTorus d={self.d} dim={self.dim} epsilon={self.epsilon:.6g}>"

    @property
    def d(self) -> int:
        return len(self.unitaries)

    @property
    def dim(self) -> int:
        return self.unitaries[0].shape[0]

    @property
    def is_trivial(self) -> bool:
        return self.measured_epsilon <= CERTIFICATE_TOL

    def to_json(self) -> dict:
        return {
            "kind": "soft_torus",
            "epsilon": self.epsilon,
            "unitaries": [matrix_to_json(u) for u in self.unitaries],
        }

    @classmethod
    def from_json(cls, obj: dict) -> SoftTorus:
        if obj.get("kind") != "soft_torus":
            raise InvalidInputError(f"Not a soft torus bundle: {obj.get('kind')!r}")
        return cls([matrix_from_json(u) for u in obj["unitaries"]], obj["epsilon"])


class LocalProjector:
    """Exactly commuting unitaries together with a projector that almost commutes with them.

    ``epsilon`` certifies ``max_i |[P, U_i]|``. A joint eigenbasis of the unitaries can be attached when it is known
    in closed form, which saves diagonalizing them later. ``symmetry`` names the class the unitaries and projector
    belong to, including the antisymmetric form for self-dual instances.
    """

    def __init__(
        self,
        unitaries: Sequence[Any],
        projector: Any,
        epsilon: float | None = None,
        *,
        eigenbasis: JointEigenbasis | None = None,
        symmetry: SymmetryClass | None = None,
        check: bool = True,
    ):
        self.unitaries = _check_unitaries(unitaries) if check else [as_matrix(u, square=True) for u in unitaries]
        self.projector = as_matrix(projector, square=True)
        if self.projector.shape != self.unitaries[0].shape:
            raise InvalidInputError("Projector and unitaries have different dimensions")

        if check:
            if _commutator_epsilon(self.unitaries) > UNITARY_TOL:
                raise InvalidInputError("Unitaries of a local projector must commute")
            p = self.projector
            if np.abs(p - p.conj().T).max() > PROJECTOR_TOL or operator_norm(p @ p - p) > PROJECTOR_TOL:
                raise InvalidInputError("Matrix is not an orthogonal projector")

        measured = max(operator_norm(commutator(self.projector, u)) for u in self.unitaries)
        if epsilon is None:
            epsilon = measured
        elif measured > epsilon + CERTIFICATE_TOL:
            raise InvalidInputError(f"Certificate {epsilon:.6g} understates the commutator norm {measured:.6g}")

        self.epsilon = float(epsilon)
        self.measured_epsilon = measured
        self.eigenbasis = eigenbasis
        self.symmetry = symmetry

    def __repr__(self) -> str:
        return f"<LocalProjector d={self.d} dim={self.dim} epsilon={self.epsilon:.6g}>"

    @property
    def d(self) -> int:
        return len(self.unitaries)

    @property
    def dim(self) -> int:
        return self.projector.shape[0]

    @property
    def rank(self) -> int:
        return round(float(np.trace(self.projector).real))

    @property
    def is_trivial(self) -> bool:
        return self.measured_epsilon <= CERTIFICATE_TOL

    def complement(self) -> LocalProjector:
        return LocalProjector(
            self.unitaries,
            np.eye(self.dim) - self.projector,
            self.epsilon,
            eigenbasis=self.eigenbasis,
            symmetry=self.symmetry,
            check=False,
        )

    def to_json(self) -> dict:
        return {
            "kind": "local_projector",
            "epsilon": self.epsilon,
            "unitaries": [matrix_to_json(u) for u in self.unitaries],
            "projector": matrix_to_json(self.projector),
        }

    @classmethod
    def from_json(cls, obj: dict) -> LocalProjector:
        if obj.get("kind") != "local_projector":
            raise InvalidInputError(f"Not a local projector bundle: {obj.get('kind')!r}")
        return cls([matrix_from_json(u) for u in obj["unitaries"]], matrix_from_json(obj["projector"]), obj["epsilon"])


def commutator_epsilon(t: SoftTorus) -> float:
    """Recompute the largest pairwise commutator norm of a soft torus."""
    return _commutator_epsilon(t.unitaries)


def _voiculescu_phases(n: int) -> tuple[np.ndarray, np.ndarray]:
    m = np.arange(n)[:, None]
    k = np.arange(n)[None, :]
    ux = np.ones((n, n), dtype=complex)
    ux[n - 1, :] = np.exp(-2j * np.pi * np.arange(n) / n)
    uy = np.exp(2j * np.pi * m / n**2) * np.ones_like(k)
    return ux, uy.astype(complex)


def voiculescu_pair(n: int) -> SoftTorus:
    """The pair ``U``, ``V`` on the ``N x N`` periodic lattice with ``V^H U^H V U = exp(2 pi i / N^2)``.

    ``U`` moves ``|m, n>`` to ``|m + 1, n>`` with phase ``U_x(m, n)``, which is 1 except on the last row ``m = N - 1``
    where it is ``exp(-2 pi i n / N)``. ``V`` moves ``|m, n>`` to ``|m, n + 1>`` with phase ``U_y(m, n) =
    exp(2 pi i m / N^2)``. Basis states are ordered with ``m`` major.
    """
    if n < 2:
        raise InvalidInputError(f"Lattice size must be at least 2, got {n}")

    ux, uy = _voiculescu_phases(n)
    dim = n * n
    u = np.zeros((dim, dim), dtype=complex)
    v = np.zeros((dim, dim), dtype=complex)
    for m in range(n):
        for k in range(n):
            u[((m + 1) % n) * n + k, m * n + k] = ux[m, k]
            v[m * n + (k + 1) % n, m * n + k] = uy[m, k]

    return SoftTorus([u, v], abs(np.exp(2j * np.pi / n**2) - 1) + CERTIFICATE_TOL)


def plaquette_phase(n: int) -> np.ndarray:
    """Phase picked up around every elementary square of the Voiculescu lattice.

    Moving right, up, left and down from ``(m, n)`` collects ``U_y(m, n)^H U_x(m, n + 1)^H U_y(m + 1, n) U_x(m, n)``,
    with each link phase attached to the site the link starts from. Entry ``[m, n]`` is the phase of the square with
    lower left corner ``(m, n)``.
    """
    if n < 2:
        raise InvalidInputError(f"Lattice size must be at least 2, got {n}")

    ux, uy = _voiculescu_phases(n)
    up = np.roll(np.arange(n), -1)
    return uy.conj() * ux[:, up].conj() * uy[up, :] * ux


def clock_shift_torus(k: int) -> SoftTorus:
    from qmath.workbench.linalg import clock_shift_pair

    return SoftTorus(clock_shift_pair(k))


def _random_hermitian(k: int, rng: np.random.Generator) -> np.ndarray:
    h = rng.standard_normal((k, k)) + 1j * rng.standard_normal((k, k))
    h = (h + h.conj().T) / 2
    return h / operator_norm(h)


def random_soft_torus(dim: int, d: int, strength: float, seed: SeedLike = None) -> SoftTorus:
    """Commuting unitaries in a random basis, each multiplied by ``exp(i strength H_i)`` for a random unit ``H_i``."""
    rng = rng_from(seed)
    w = haar_unitary(dim, rng)
    us = []
    for _ in range(d):
        phases = rng.uniform(0, 2 * np.pi, dim)
        u = (w * np.exp(1j * phases)) @ w.conj().T
        us.append(u @ expm(1j * strength * _random_hermitian(dim, rng)))
    return SoftTorus(us)


def random_local_projector(dim: int, d: int, rank: int, strength: float, seed: SeedLike = None) -> LocalProjector:
    """Commuting unitaries with a rotated joint spectral projector.

    The unrotated projector is spanned by ``rank`` joint eigenvectors and commutes exactly, a small random rotation
    ``exp(i strength H)`` then makes it almost commuting. The certificate is the measured commutator norm.
    """
    if not 0 < rank < dim:
        raise InvalidInputError(f"Rank must lie strictly between 0 and {dim}, got {rank}")

    rng = rng_from(seed)
    w = haar_unitary(dim, rng)
    phases = rng.uniform(0, 2 * np.pi, (d, dim))
    us = [(w * np.exp(1j * phases[i])) @ w.conj().T for i in range(d)]

    mask = np.zeros(dim)
    mask[rng.permutation(dim)[:rank]] = 1.0
    rotation = expm(1j * strength * _random_hermitian(dim, rng))
    p = rotation @ (w * mask) @ w.conj().T @ rotation.conj().T
    p = (p + p.conj().T) / 2

    basis = JointEigenbasis(w, tuple(phases))
    return LocalProjector(us, p, eigenbasis=basis)


def _bump(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = np.abs(x) < 1
    out[inside] = np.exp(-1.0 / (1.0 - x[inside] ** 2))
    return out


def bump_window(x: np.ndarray) -> np.ndarray:
    """Smooth partition of unity ``psi(x) / sum_n psi(x + n)`` with ``psi(x) = exp(-1 / (1 - x^2))``."""
    x = np.asarray(x, dtype=float)
    total = sum(_bump(x + n) for n in range(-2, 3))
    return _bump(x) / total


def hann_window(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.where(np.abs(x) < 1, np.cos(np.pi * x / 2) ** 2, 0.0)


WINDOWS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "bump": bump_window,
    "hann": hann_window,
}

Window = Union[str, Callable[[np.ndarray], np.ndarray]]


def resolve_window(window: Window) -> Callable[[np.ndarray], np.ndarray]:
    """Look up a window by name and check that it is a nonnegative partition of unity supported in (-1, 1)."""
    if isinstance(window, str):
        try:
            fn = WINDOWS[window]
        except KeyError:
            raise InvalidWindowError(f"Unknown window {window!r}, expected one of {sorted(WINDOWS)}")
    else:
        fn = window

    x = np.linspace(-3, 3, 6001)
    values = fn(x)
    if (values < 0).any():
        raise InvalidWindowError("Window takes negative values")
    if (values[np.abs(x) >= 1] != 0).any():
        raise InvalidWindowError("Window is not supported in (-1, 1)")

    total = sum(fn(x + n) for n in range(-4, 5))
    defect = float(np.abs(total - 1).max())
    if defect > SUM_RULE_TOL:
        raise InvalidWindowError(f"Window translates do not sum to one: defect {defect:.3e}")
    return fn


class PovmSystem:
    """The POVM of a soft torus on a grid of spacing ``delta``.

    With ``X_i`` and ``Y_i`` the real and imaginary parts of ``U_i``, the outcome ``(m_1..m_d, n_1..n_d)`` has
    factor ``A = F(X_1/delta - m_1)^(1/2) ... F(X_d/delta - m_d)^(1/2) F(Y_1/delta - n_1)^(1/2) ...
    F(Y_d/delta - n_d)^(1/2)`` in exactly this order, and element ``E = A A^H``. The element is concentrated where
    ``X_i`` is near ``m_i delta`` and ``Y_i`` near ``n_i delta``.

    Only the square root factors of each coordinate are stored, and indices whose factor vanishes identically are
    dropped. Elements are materialized on demand; sums of elements with outcome weights are evaluated by nesting the
    coordinate sums, which never builds the ``D * C`` dimensional dilation space.
    """

    def __init__(self, torus: SoftTorus, delta: float, window: Window = "bump"):
        if not 0 < delta <= 2:
            raise InvalidInputError(f"Grid spacing must lie in (0, 2], got {delta}")

        self.torus = torus
        self.delta = float(delta)
        self.window_name = window if isinstance(window, str) else getattr(window, "__name__", "custom")
        self.window = resolve_window(window)
        self.radius = math.ceil(1 / delta) + 1

        sqrt_window = lambda x: np.sqrt(self.window(x))  # noqa: E731

        self.positions = []
        self.axes = []
        parts = [(u + u.conj().T) / 2 for u in torus.unitaries] + [(u - u.conj().T) / 2j for u in torus.unitaries]
        for h in parts:
            eig = hermitian_eig(h)
            scaled = eig.eigenvalues / self.delta
            indices = [m for m in range(-self.radius, self.radius + 1) if (np.abs(scaled - m) < 1).any()]
            self.positions.append(np.array(indices))
            self.axes.append([_eig_apply(eig, lambda x, m=m: sqrt_window(x / self.delta - m)) for m in indices])

        log.debug(
            "POVM with delta=%.4g, window=%s, %d outcomes of dimension %d",
            self.delta,
            self.window_name,
            self.count,
            self.dim,
        )

    @property
    def d(self) -> int:
        return self.torus.d

    @property
    def dim(self) -> int:
        return self.torus.dim

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(axis) for axis in self.axes)

    @property
    def count(self) -> int:
        return math.prod(self.shape)

    def outcomes(self) -> Iterator[tuple[int, ...]]:
        """Outcome positions ``(i_1..i_2d)`` into the active index lists, in row-major order."""
        return itertools.product(*(range(n) for n in self.shape))

    def labels(self, outcome: tuple[int, ...]) -> tuple[int, ...]:
        """Grid indices ``(m_1..m_d, n_1..n_d)`` of an outcome."""
        return tuple(int(self.positions[j][k]) for j, k in enumerate(outcome))

    def grid_values(self, axis: int) -> np.ndarray:
        """``m delta`` for every active index of a coordinate."""
        return self.positions[axis] * self.delta

    def factor(self, outcome: tuple[int, ...]) -> np.ndarray:
        out = self.axes[0][outcome[0]]
        for axis, k in zip(self.axes[1:], outcome[1:]):
            out = out @ axis[k]
        return out

    def element(self, outcome: tuple[int, ...]) -> np.ndarray:
        a = self.factor(outcome)
        return a @ a.conj().T

    def weighted_sum(self, weights: np.ndarray, *, exact: bool = False) -> np.ndarray:
        """``sum_o w(o) E_o`` for an array of outcome weights of shape :attr:`shape`.

        Inner sums over coordinates on which the weights no longer depend collapse to a multiple of the identity by
        completeness, unless ``exact`` is set.
        """
        weights = np.broadcast_to(np.asarray(weights, dtype=complex), self.shape)
        return self._nested(weights, 0, exact)

    def _nested(self, weights: np.ndarray, level: int, exact: bool) -> np.ndarray:
        if level == len(self.axes):
            return complex(weights) * np.eye(self.dim)
        if not exact and np.ptp(weights) == 0:
            return weights.flat[0] * np.eye(self.dim, dtype=complex)

        out = np.zeros((self.dim, self.dim), dtype=complex)
        for k, f in enumerate(self.axes[level]):
            out += f @ self._nested(weights[k], level + 1, exact) @ f
        return out

    def completeness_defect(self) -> float:
        return operator_norm(self.weighted_sum(np.ones(self.shape), exact=True) - np.eye(self.dim))

    def min_eigenvalue(self) -> float:
        return min(float(np.linalg.eigvalsh(self.element(o))[0]) for o in self.outcomes())

    def moment(self, axis: int, power: int = 1) -> np.ndarray:
        """``sum_o (m_axis delta)^power E_o``."""
        values = self.grid_values(axis) ** power
        shape = [1] * len(self.axes)
        shape[axis] = -1
        return self.weighted_sum(values.reshape(shape))


def _eig_apply(eig: HermitianEig, f: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    out = eig.apply(f)
    return (out + out.conj().T) / 2


def build_povm(t: SoftTorus, delta: float, window: Window = "bump") -> PovmSystem:
    povm = PovmSystem(t, delta, window)
    defect = povm.completeness_defect()
    if defect > COMPLETENESS_TOL:
        raise InvalidPovmError(f"POVM elements do not sum to the identity: defect {defect:.3e}")
    return povm


@dataclass
class Dilation:
    """Projective measurement on a larger space that compresses to a POVM.

    The isometry ``W`` stacks the blocks ``A_o^H``, so ``Pi = W W^H`` is a projector whose range is a copy of the
    original space and the coordinate block projectors ``Q_o`` satisfy ``W^H Q_o W = E_o``. When ``frame`` is set,
    it is a unitary ``M`` giving the same dilation in the frame where ``Pi`` is the projector on the first ``D``
    coordinates, with outcome projectors ``M Q_o M^H``. ``form`` and ``frame_form`` are the antisymmetric forms for
    which a self-dual dilation is self-dual, in the coordinate and the framed picture respectively.
    """

    isometry: np.ndarray
    slices: list[slice]
    frame: np.ndarray | None = None
    form: np.ndarray | None = None
    frame_form: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.isometry.shape[1]

    @property
    def ambient_dim(self) -> int:
        return self.isometry.shape[0]

    def projector(self) -> np.ndarray:
        return self.isometry @ self.isometry.conj().T

    def outcome_projector(self, o: int) -> np.ndarray:
        q = np.zeros((self.ambient_dim, self.ambient_dim), dtype=complex)
        idx = np.arange(self.ambient_dim)[self.slices[o]]
        q[idx, idx] = 1.0
        return q

    def restricted(self, o: int) -> np.ndarray:
        """``W^H Q_o W``."""
        block = self.isometry[self.slices[o]]
        return block.conj().T @ block

    def frame_projector(self) -> np.ndarray:
        p = np.zeros((self.ambient_dim, self.ambient_dim), dtype=complex)
        p[: self.dim, : self.dim] = np.eye(self.dim)
        return p

    def frame_outcome_projector(self, o: int) -> np.ndarray:
        columns = self.frame[:, self.slices[o]]
        return columns @ columns.conj().T


def naimark_dilate(povm: PovmSystem | Sequence[np.ndarray]) -> Dilation:
    """Dense dilation of a POVM, given as a :class:`PovmSystem` or as a list of elements."""
    if isinstance(povm, PovmSystem):
        defect = povm.completeness_defect()
        factors = [povm.factor(o) for o in povm.outcomes()]
        dim = povm.dim
    else:
        elements = [as_matrix(e, square=True) for e in povm]
        dim = elements[0].shape[0]
        defect = operator_norm(sum(elements) - np.eye(dim))
        factors = [_eig_apply(hermitian_eig(e), lambda x: np.sqrt(np.clip(x, 0, None))) for e in elements]

    if defect > COMPLETENESS_TOL:
        raise InvalidPovmError(f"POVM elements do not sum to the identity: defect {defect:.3e}")
    if dim * len(factors) > MAX_DENSE:
        raise TooLargeError(f"Dilation space of dimension {dim * len(factors)} exceeds {MAX_DENSE}")

    isometry = np.vstack([a.conj().T for a in factors])
    slices = [slice(i * dim, (i + 1) * dim) for i in range(len(factors))]
    return Dilation(isometry, slices)


class DilatedProjector:
    """Output of :func:`map_F`, kept in compressed form.

    The unitaries act on the dilation space as the phase ``exp(i phi_i(o))`` on every outcome block and the projector
    is the range of the POVM isometry. All quantities needed downstream are compressions to the original space of
    operators that are diagonal in outcomes, which are sums ``sum_o w(o) E_o``.
    """

    def __init__(self, povm: PovmSystem, phases: list[np.ndarray], z: complex, shift: float):
        self.povm = povm
        self.phases = phases
        self.z = z
        self.shift = shift

    def __repr__(self) -> str:
        return f"<DilatedProjector d={self.d} dim={self.dim} outcomes={self.povm.count}>"

    @property
    def d(self) -> int:
        return self.povm.d

    @property
    def dim(self) -> int:
        """Dimension of the dilation space."""
        return self.povm.dim * self.povm.count

    @property
    def rank(self) -> int:
        return self.povm.dim

    @property
    def delta(self) -> float:
        return self.povm.delta

    def compressed(self, i: int) -> np.ndarray:
        """``K_i = W^H U'_i W = sum_o exp(i phi_i(o)) E_o``."""
        return self._compressed[i]

    @cached_property
    def _compressed(self) -> list[np.ndarray]:
        return [self.povm.weighted_sum(np.exp(1j * phi)) for phi in self.phases]

    @cached_property
    def epsilon(self) -> float:
        """``max_i |[Pi, U'_i]|`` from ``sqrt(max(|I - K K^H|, |I - K^H K|))``."""
        eye = np.eye(self.povm.dim)
        value = 0.0
        for k in self._compressed:
            inner = max(operator_norm(eye - k @ k.conj().T), operator_norm(eye - k.conj().T @ k))
            value = max(value, math.sqrt(max(inner, 0.0)))
        return value

    def position_error(self, i: int) -> float:
        """``|Pi X'_i Pi - X_i|`` restricted to the original space."""
        u = self.povm.torus.unitaries[i]
        return operator_norm(self.povm.moment(i) - (u + u.conj().T) / 2)

    def second_moment_error(self, i: int) -> float:
        """``|sum_o (m_i delta)^2 E_o - X_i^2|``."""
        u = self.povm.torus.unitaries[i]
        x = (u + u.conj().T) / 2
        return operator_norm(self.povm.moment(i, 2) - x @ x)

    @cached_property
    def eigenbasis(self) -> JointEigenbasis:
        """Standard basis of the dilation space, outcome blocks in outcome order."""
        if self.dim > MAX_DENSE:
            raise TooLargeError(f"Dilation space of dimension {self.dim} exceeds {MAX_DENSE}")
        phases = tuple(np.mod(np.repeat(phi.ravel(), self.povm.dim), 2 * np.pi) for phi in self.phases)
        return JointEigenbasis(np.eye(self.dim, dtype=complex), phases)

    def dense(self) -> LocalProjector:
        """Materialize the dilation as an ordinary local projector (only for small instances)."""
        dilation = naimark_dilate(self.povm)
        us = [np.diag(np.exp(1j * np.repeat(phi.ravel(), self.povm.dim))) for phi in self.phases]
        p = dilation.projector()
        return LocalProjector(us, p, eigenbasis=self.eigenbasis, check=False)


def outcome_phases(povm: PovmSystem) -> tuple[list[np.ndarray], complex]:
    """Phases ``phi_i(o)`` of ``m_i delta + i n_i delta + x z`` over the outcome grid, and the chosen ``z``."""
    d = povm.d
    for z in itertools.islice(_unit_sequence(), 64):
        values = []
        for i in range(d):
            m = povm.grid_values(i)
            n = povm.grid_values(d + i)
            values.append(m[:, None] + 1j * n[None, :] + PERTURBATION * z)
        if min(float(np.abs(v).min()) for v in values) > PERTURBATION_MIN_SINGULAR:
            break
    log.debug("Perturbation direction z=%s", z)

    phases = []
    for i, value in enumerate(values):
        shape = [1] * (2 * d)
        shape[i] = value.shape[0]
        shape[d + i] = value.shape[1]
        phases.append(np.broadcast_to(np.angle(value).reshape(shape), povm.shape))
    return phases, z


def map_F(t: SoftTorus, delta: float | None = None, window: Window = "bump") -> LocalProjector | DilatedProjector:
    """Turn a soft torus into a local projector by measuring its approximate joint spectrum.

    The grid spacing defaults to ``sqrt(d epsilon)``. The output unitaries are the phases of
    ``m_i delta + i n_i delta + x z`` on outcome ``(m, n)``, with ``x = 1e-6`` and ``z`` the first point of a fixed
    sequence on the unit circle keeping every such value away from zero. A commuting input without a spacing
    override is embedded trivially with ``P = I``.
    """
    epsilon = commutator_epsilon(t)
    if delta is None:
        if epsilon <= CERTIFICATE_TOL:
            log.debug("Commuting input, returning the trivial embedding")
            return LocalProjector(t.unitaries, np.eye(t.dim), 0.0)
        delta = math.sqrt(t.d * epsilon)

    if delta >= 2:
        raise OutOfRegimeError(f"Grid spacing {delta:.4g} is not below 2, commutators are too large")

    povm = build_povm(t, delta, window)
    phases, z = outcome_phases(povm)
    return DilatedProjector(povm, phases, z, PERTURBATION)


def _polar_perturbed(k: np.ndarray, metadata: dict, key: str) -> np.ndarray:
    try:
        return polar(k)
    except RankDeficientError:
        pass

    for z in itertools.islice(_unit_sequence(), 64):
        shifted = k + PERTURBATION * z * np.eye(k.shape[0])
        if np.linalg.svd(shifted, compute_uv=False)[-1] > PERTURBATION_MIN_SINGULAR:
            log.info("Compressed block %s is singular, perturbing by %.1e z with z=%s", key, PERTURBATION, z)
            metadata[key] = z
            return polar(shifted)
    raise RankDeficientError(f"Compressed block {key} stays singular under perturbation")


def _range_basis(p: np.ndarray, symmetry: SymmetryClass | None) -> np.ndarray:
    if symmetry is not None and symmetry.is_constrained:
        from qmath.workbench.symmetry import range_basis

        return range_basis(p, symmetry)

    diagonal = np.diag(p)
    if np.abs(p - np.diag(diagonal)).max() <= 1e-12 and np.all(
        (np.abs(diagonal) <= 1e-12) | (np.abs(diagonal - 1) <= 1e-12)
    ):
        return np.eye(p.shape[0], dtype=complex)[:, np.abs(diagonal - 1) <= 1e-12]

    values, vectors = np.linalg.eigh(p)
    return vectors[:, values > 0.5]


def map_G(p: LocalProjector | DilatedProjector, *, symmetry: SymmetryClass | None = None) -> SoftTorus:
    """Compress the unitaries to the range of the projector and take polar parts.

    For a dilated projector the range is identified with the original space through the POVM isometry. Otherwise an
    orthonormal basis of the range is used: a basis respecting ``symmetry`` (by default the class attached to the
    projector), coordinate vectors when the projector is a diagonal 0/1 matrix, and eigenvectors otherwise. A
    self-dual result is self-dual for the standard form of its dimension.
    """
    if p.epsilon > MAP_G_MAX_EPSILON:
        raise OutOfRegimeError(f"Projector commutators {p.epsilon:.4g} exceed {MAP_G_MAX_EPSILON}")

    if isinstance(p, DilatedProjector):
        blocks = [p.compressed(i) for i in range(p.d)]
    else:
        basis = _range_basis(p.projector, symmetry or p.symmetry)
        blocks = [basis.conj().T @ u @ basis for u in p.unitaries]

    metadata = {}
    us = [_polar_perturbed(k, metadata, f"U{i + 1}") for i, k in enumerate(blocks)]
    return SoftTorus(us, metadata=metadata)


def roundtrip_GF(t: SoftTorus, delta: float | None = None, window: Window = "bump") -> float:
    """Distance between a soft torus and its image under map_F followed by map_G, in the same basis."""
    back = map_G(map_F(t, delta, window))
    return max(operator_norm(a - b) for a, b in zip(back.unitaries, t.unitaries))


def direct_sum(a: SoftTorus | LocalProjector, b: SoftTorus | LocalProjector) -> SoftTorus | LocalProjector:
    if a.d != b.d:
        raise InvalidInputError(f"Cannot add tori with d={a.d} and d={b.d}")

    us = [block_diag(x, y) for x, y in zip(a.unitaries, b.unitaries)]
    epsilon = max(a.epsilon, b.epsilon)
    if isinstance(a, SoftTorus) and isinstance(b, SoftTorus):
        return SoftTorus(us, epsilon)
    if isinstance(a, LocalProjector) and isinstance(b, LocalProjector):
        return LocalProjector(us, block_diag(a.projector, b.projector), epsilon)
    raise InvalidInputError(f"Cannot add {type(a).__name__} and {type(b).__name__}")


def _intertwiner(a: SoftTorus, b: SoftTorus) -> np.ndarray:
    # Y with A_i Y = Y B_i, as the least singular vector of the stacked linear system
    k = a.dim
    eye = np.eye(k)
    system = np.vstack([np.kron(x, eye) - np.kron(eye, y.T) for x, y in zip(a.unitaries, b.unitaries)])
    _, _, vh = np.linalg.svd(system)
    return polar(vh[-1].conj().reshape(k, k))


def _eigen_alignment(a: SoftTorus, b: SoftTorus) -> np.ndarray:
    def _sorted_basis(u: np.ndarray) -> np.ndarray:
        values, vectors = np.linalg.eig(u)
        order = np.argsort(np.mod(np.angle(values), 2 * np.pi), kind="stable")
        return polar(vectors[:, order])

    return _sorted_basis(a.unitaries[0]) @ _sorted_basis(b.unitaries[0]).conj().T


def distance_upper(a: SoftTorus, b: SoftTorus) -> float:
    """Upper bound on ``min_Y max_i |Y^H A_i Y - B_i|`` over unitaries ``Y``.

    Tried are the identity, the alignment of the sorted eigenbases of the first unitaries and the polar part of an
    approximate intertwiner ``A_i Y = Y B_i`` (only up to dimension 24).
    """
    if a.dim != b.dim or a.d != b.d:
        raise InvalidInputError("Tori have different dimensions")

    candidates = [np.eye(a.dim, dtype=complex)]
    for build in (_eigen_alignment, _intertwiner):
        if build is _intertwiner and a.dim > MAX_INTERTWINER:
            continue
        try:
            candidates.append(build(a, b))
        except (RankDeficientError, np.linalg.LinAlgError):
            log.debug("Alignment %s not available", build.__name__)

    return min(
        max(operator_norm(y.conj().T @ x @ y - v) for x, v in zip(a.unitaries, b.unitaries)) for y in candidates
    )
