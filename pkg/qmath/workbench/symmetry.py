from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Any

import numpy as np
from scipy.linalg import block_diag, expm

from qmath.workbench.exceptions import (
    DilationFailure,
    InvalidInputError,
    InvalidPovmError,
    OutOfRegimeError,
    TooLargeError,
)
from qmath.workbench.linalg import (
    JointEigenbasis,
    SeedLike,
    as_matrix,
    hermitian_defect,
    operator_norm,
    rng_from,
    unitarity_defect,
)
from qmath.workbench.softtorus import (
    CERTIFICATE_TOL,
    COMPLETENESS_TOL,
    MAX_DENSE,
    Dilation,
    LocalProjector,
    SoftTorus,
    Window,
    build_povm,
    commutator_epsilon,
    outcome_phases,
    random_soft_torus,
)

if TYPE_CHECKING:
    from collections.abc import Sequence

log = logging.getLogger(__name__)

CONSTRUCTION_TOL = 1e-10
PIPELINE_TOL = 1e-8
KRAMERS_TOL = 1e-11
NEGLIGIBLE_EIGENVALUE = 1e-14


class SymmetryTag(Enum):
    NONE = "none"
    SYMMETRIC = "symmetric"
    SELF_DUAL = "self_dual"


def standard_form(dim: int) -> np.ndarray:
    """``Z = [[0, I], [-I, 0]]`` in even dimension ``dim``."""
    if dim % 2:
        raise InvalidInputError(f"Self-dual class needs an even dimension, got {dim}")
    half = dim // 2
    z = np.zeros((dim, dim))
    z[:half, half:] = np.eye(half)
    z[half:, :half] = -np.eye(half)
    return z


def pair_form(dim: int) -> np.ndarray:
    """Direct sum of ``[[0, 1], [-1, 0]]`` blocks over consecutive coordinate pairs."""
    if dim % 2:
        raise InvalidInputError(f"Self-dual class needs an even dimension, got {dim}")
    return np.kron(np.eye(dim // 2), np.array([[0.0, 1.0], [-1.0, 0.0]]))


@dataclass(frozen=True)
class SymmetryClass:
    """Symmetric matrices satisfy ``M = M^T``, self-dual ones ``M = -Z M^T Z``.

    ``form`` fixes ``Z`` for self-dual classes; when unset, :func:`standard_form` of the matrix dimension is used.
    """

    tag: SymmetryTag = SymmetryTag.NONE
    form: np.ndarray | None = None

    @classmethod
    def parse(cls, name: str) -> SymmetryClass:
        aliases = {"selfdual": "self_dual", "self-dual": "self_dual"}
        try:
            return cls(SymmetryTag(aliases.get(name, name)))
        except ValueError:
            raise InvalidInputError(f"Unknown symmetry class {name!r}")

    @property
    def is_constrained(self) -> bool:
        return self.tag is not SymmetryTag.NONE

    def z(self, dim: int) -> np.ndarray:
        if self.form is None:
            return standard_form(dim)
        if self.form.shape != (dim, dim):
            raise InvalidInputError(f"Form of shape {self.form.shape} does not fit dimension {dim}")
        return self.form

    def conjugate(self, m: np.ndarray) -> np.ndarray:
        """The class involution: ``M^T`` or ``-Z M^T Z``; members are its fixed points."""
        if self.tag is SymmetryTag.SYMMETRIC:
            return m.T
        if self.tag is SymmetryTag.SELF_DUAL:
            z = self.z(m.shape[0])
            return -z @ m.T @ z
        return m


NO_SYMMETRY = SymmetryClass()
SYMMETRIC = SymmetryClass(SymmetryTag.SYMMETRIC)
SELF_DUAL = SymmetryClass(SymmetryTag.SELF_DUAL)


def symmetry_check(m: Any, cls: SymmetryClass) -> float:
    """Defect ``|M - M^T|`` or ``|M + Z M^T Z|``; zero for class members."""
    m = as_matrix(m, square=True)
    if cls.tag is SymmetryTag.NONE:
        return 0.0
    return operator_norm(m - cls.conjugate(m))


def max_defect(matrices: Sequence[np.ndarray], cls: SymmetryClass) -> float:
    return max((symmetry_check(m, cls) for m in matrices), default=0.0)


def structured_rank_decomposition(
    p: Any, cls: SymmetryClass, *, tol: float = CONSTRUCTION_TOL
) -> list[np.ndarray]:
    """Split a class member projector into orthogonal class member pieces.

    Symmetric projectors are real and split into rank one terms ``v v^T`` with real ``v``. Self-dual projectors split
    into rank two terms spanned by ``v`` and ``Z conj(v)``, which are orthogonal since ``Z`` is antisymmetric. Each
    piece is returned as the matrix of its spanning columns.
    """
    p = as_matrix(p, square=True)
    dim = p.shape[0]
    if hermitian_defect(p) > tol or operator_norm(p @ p - p) > tol:
        raise InvalidInputError("Matrix is not an orthogonal projector")

    defect = symmetry_check(p, cls)
    if defect > tol:
        raise InvalidInputError(f"Projector is not in the {cls.tag.value} class: defect {defect:.3e}")

    if cls.tag is SymmetryTag.SELF_DUAL:
        factors = _kramers_pairs(p, cls.z(dim))
    else:
        source = p.real if cls.tag is SymmetryTag.SYMMETRIC else p
        values, vectors = np.linalg.eigh(source)
        factors = [vectors[:, [j]].astype(complex) for j in np.flatnonzero(values > 0.5)]

    error = operator_norm(sum((f @ f.conj().T for f in factors), np.zeros_like(p)) - p)
    if error > 10 * tol:
        raise InvalidInputError(f"Structured decomposition does not reproduce the projector: error {error:.3e}")
    return factors


def _kramers_pairs(p: np.ndarray, z: np.ndarray) -> list[np.ndarray]:
    rank = round(float(np.trace(p).real))
    if rank % 2:
        raise InvalidInputError(f"Self-dual projector must have even rank, got {rank}")

    remaining = p.copy()
    factors = []
    for _ in range(rank // 2):
        j = int(np.argmax(np.linalg.norm(remaining, axis=0)))
        v = remaining[:, j] / np.linalg.norm(remaining[:, j])
        w = z @ v.conj()
        factors.append(np.column_stack([v, w]))
        remaining = remaining - np.outer(v, v.conj()) - np.outer(w, w.conj())
        remaining = (remaining + remaining.conj().T) / 2
    return factors


def structured_factors(e: Any, cls: SymmetryClass) -> list[np.ndarray]:
    """Columns ``w`` with ``E = sum w w^H`` for a positive class member, grouped as in the projector decomposition.

    Self-dual elements are decomposed per eigenvalue cluster, since their eigenvalues come in degenerate pairs.
    """
    e = as_matrix(e, square=True)
    if cls.tag is not SymmetryTag.SELF_DUAL:
        source = e.real if cls.tag is SymmetryTag.SYMMETRIC else e
        values, vectors = np.linalg.eigh((source + source.conj().T) / 2)
        return [
            math.sqrt(values[j]) * vectors[:, [j]].astype(complex)
            for j in np.flatnonzero(values > NEGLIGIBLE_EIGENVALUE)
        ]

    values, vectors = np.linalg.eigh((e + e.conj().T) / 2)
    cuts = np.flatnonzero(np.diff(values) > KRAMERS_TOL) + 1
    factors = []
    for cluster in np.split(np.arange(len(values)), cuts):
        value = float(values[cluster].mean())
        if value <= NEGLIGIBLE_EIGENVALUE:
            continue
        q = vectors[:, cluster]
        projector = q @ q.conj().T
        for f in structured_rank_decomposition(projector, cls, tol=PIPELINE_TOL):
            factors.append(math.sqrt(value) * f)
    return factors


def range_basis(p: Any, cls: SymmetryClass) -> np.ndarray:
    """Orthonormal basis of the range of a class member projector.

    For the self-dual class the columns are ordered ``[V, Z conj(V)]``, so that compressions of self-dual matrices
    are self-dual for the standard form of the range dimension.
    """
    factors = structured_rank_decomposition(p, cls, tol=PIPELINE_TOL)
    if cls.tag is SymmetryTag.SELF_DUAL:
        return np.column_stack([f[:, 0] for f in factors] + [f[:, 1] for f in factors])
    return np.hstack(factors)


def symmetric_naimark_dilate(elements: Sequence[Any], cls: SymmetryClass) -> Dilation:
    """Dilate a POVM of class members so that the projector and outcome projectors stay in the class.

    Every element is written as ``sum w w^H`` with class structured columns ``w``, which are collected into ``A``.
    Completeness makes the rows of ``A`` orthonormal, and the orthogonal complement of the row space is completed with
    class structured vectors into a unitary ``M = [A; Y^H]``. In the self-dual case the outcome columns come in pairs
    ``(v, Z conj(v))``, so ``Z conj(A) = A J^T`` with ``J`` the pair form, and the framed picture is self-dual for
    ``Z`` plus the pair form on the complement.
    """
    elements = [as_matrix(e, square=True) for e in elements]
    if not elements:
        raise InvalidInputError("Need at least one POVM element")
    dim = elements[0].shape[0]

    defect = max_defect(elements, cls)
    if defect > CONSTRUCTION_TOL:
        raise InvalidInputError(f"POVM elements are not in the {cls.tag.value} class: defect {defect:.3e}")

    completeness = operator_norm(sum(elements) - np.eye(dim))
    if completeness > COMPLETENESS_TOL:
        raise InvalidPovmError(f"POVM elements do not sum to the identity: defect {completeness:.3e}")

    blocks = []
    slices = []
    offset = 0
    for e in elements:
        factors = structured_factors(e, cls)
        block = np.hstack(factors) if factors else np.zeros((dim, 0), dtype=complex)
        blocks.append(block)
        slices.append(slice(offset, offset + block.shape[1]))
        offset += block.shape[1]

    a = np.hstack(blocks)
    ambient = a.shape[1]
    if ambient > MAX_DENSE:
        raise TooLargeError(f"Dilation space of dimension {ambient} exceeds {MAX_DENSE}")

    column_form = frame_form = None
    complement_cls = cls
    if cls.tag is SymmetryTag.SELF_DUAL:
        column_form = pair_form(ambient)
        frame_form = block_diag(cls.z(dim), pair_form(ambient - dim))
        complement_cls = SymmetryClass(SymmetryTag.SELF_DUAL, column_form)

    complement = np.eye(ambient) - a.conj().T @ a
    complement = (complement + complement.conj().T) / 2
    try:
        ys = structured_rank_decomposition(complement, complement_cls, tol=PIPELINE_TOL) if ambient > dim else []
    except InvalidInputError as e:
        raise DilationFailure(f"Cannot complete the isometry: {e}", diagnostics={"ambient": ambient})

    y = np.hstack(ys) if ys else np.zeros((ambient, 0), dtype=complex)
    frame = np.vstack([a, y.conj().T])

    dilation = Dilation(
        a.conj().T,
        slices,
        frame=frame,
        form=column_form,
        frame_form=frame_form,
        metadata={"class": cls.tag.value},
    )

    diagnostics = {
        "unitarity": unitarity_defect(frame) if frame.shape[0] == frame.shape[1] else math.inf,
        "restriction": max(operator_norm(dilation.restricted(o) - e) for o, e in enumerate(elements)),
    }
    if cls.is_constrained:
        framed = [dilation.frame_outcome_projector(o) for o in range(len(elements))]
        frame_cls = SymmetryClass(cls.tag, frame_form)
        diagnostics["class"] = max(max_defect(framed, frame_cls), symmetry_check(dilation.frame_projector(), frame_cls))

    log.debug("Structured dilation of %d elements into dimension %d: %s", len(elements), ambient, diagnostics)
    if max(diagnostics.values()) > PIPELINE_TOL:
        raise DilationFailure("Structured dilation failed its consistency checks", diagnostics=diagnostics)
    return dilation


def symmetric_map_F(
    t: SoftTorus, cls: SymmetryClass, delta: float | None = None, window: Window = "bump"
) -> LocalProjector:
    """map_F realized through :func:`symmetric_naimark_dilate`, materialized densely.

    The output carries its class, with the pair form for self-dual outputs.
    """
    epsilon = commutator_epsilon(t)
    if delta is None:
        if epsilon <= CERTIFICATE_TOL:
            return LocalProjector(t.unitaries, np.eye(t.dim), 0.0, symmetry=cls)
        delta = math.sqrt(t.d * epsilon)
    if delta >= 2:
        raise OutOfRegimeError(f"Grid spacing {delta:.4g} is not below 2, commutators are too large")

    povm = build_povm(t, delta, window)
    outcomes = list(povm.outcomes())
    elements = [povm.element(o) for o in outcomes]
    # The ordered factor product is not a class member itself; average it with its image under the involution
    if cls.tag is SymmetryTag.SYMMETRIC:
        elements = [e.real.astype(complex) for e in elements]
    elif cls.tag is SymmetryTag.SELF_DUAL:
        elements = [(e + cls.conjugate(e)) / 2 for e in elements]
    dilation = symmetric_naimark_dilate(elements, cls)

    phases, _ = outcome_phases(povm)
    widths = [s.stop - s.start for s in dilation.slices]
    angles = [np.repeat([phi[o] for o in outcomes], widths) for phi in phases]
    us = [np.diag(np.exp(1j * a)) for a in angles]

    basis = JointEigenbasis(np.eye(dilation.ambient_dim, dtype=complex), tuple(np.mod(a, 2 * np.pi) for a in angles))
    output_cls = SymmetryClass(cls.tag, dilation.form)
    return LocalProjector(us, dilation.projector(), eigenbasis=basis, symmetry=output_cls, check=False)


def _class_hermitian(dim: int, cls: SymmetryClass, rng: np.random.Generator) -> np.ndarray:
    if cls.tag is SymmetryTag.SYMMETRIC:
        h = rng.standard_normal((dim, dim))
        h = (h + h.T) / 2
    else:
        h = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
        h = (h + h.conj().T) / 2
        if cls.tag is SymmetryTag.SELF_DUAL:
            h = (h + cls.conjugate(h)) / 2
    return h / operator_norm(h)


def random_class_torus(cls: SymmetryClass, dim: int, d: int, strength: float, seed: SeedLike = None) -> SoftTorus:
    """Unitaries ``exp(i (c_i H_0 + strength K_i))`` with class member Hermitian ``H_0`` and ``K_i``.

    Exponentials of symmetric (self-dual) Hermitian matrices are symmetric (self-dual) unitaries, and functions of the
    common ``H_0`` commute, so the commutators are of order ``strength``.
    """
    if not cls.is_constrained:
        return random_soft_torus(dim, d, strength, seed)

    rng = rng_from(seed)
    h0 = _class_hermitian(dim, cls, rng)
    us = []
    for _ in range(d):
        c = rng.uniform(1.0, 3.0)
        us.append(expm(1j * (c * h0 + strength * _class_hermitian(dim, cls, rng))))
    return SoftTorus(us)


def random_class_local_projector(
    cls: SymmetryClass, dim: int, d: int, rank: int, strength: float, seed: SeedLike = None
) -> LocalProjector:
    """Unitaries ``exp(i c_i H_0)`` and the spectral projector on the ``rank`` lowest levels of ``H_0 + strength K``."""
    if not 0 < rank < dim:
        raise InvalidInputError(f"Rank must lie strictly between 0 and {dim}, got {rank}")
    if cls.tag is SymmetryTag.SELF_DUAL and rank % 2:
        raise InvalidInputError(f"Self-dual projectors have even rank, got {rank}")

    rng = rng_from(seed)
    h0 = _class_hermitian(dim, cls, rng)
    us = [expm(1j * rng.uniform(1.0, 3.0) * h0) for _ in range(d)]
    us = [(u + cls.conjugate(u)) / 2 for u in us] if cls.is_constrained else us

    values, vectors = np.linalg.eigh(h0 + strength * _class_hermitian(dim, cls, rng))
    if cls.tag is SymmetryTag.SYMMETRIC:
        vectors = vectors.real
    low = vectors[:, :rank]
    p = low @ low.conj().T
    p = (p + p.conj().T) / 2
    if cls.is_constrained:
        p = (p + cls.conjugate(p)) / 2
    log.debug("Class projector with gap %.3g at rank %d", values[rank] - values[rank - 1], rank)
    return LocalProjector(us, p, symmetry=cls)
