from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any, Callable, Union

import numpy as np

from qmath.workbench.exceptions import InvalidInputError, NotCommutingError, RankDeficientError

if TYPE_CHECKING:
    from collections.abc import Sequence

log = logging.getLogger(__name__)

SeedLike = Union[int, "Sequence[int]", np.random.Generator, None]

HERMITIAN_TOL = 1e-10
COMMUTING_TOL = 1e-8
SINGULAR_TOL = 1e-12
CLUSTER_TOL = 1e-6
MAX_SPLIT_DEPTH = 8


def as_matrix(m: Any, *, square: bool = False) -> np.ndarray:
    """Return ``m`` as a finite two dimensional complex array."""
    m = np.asarray(m, dtype=complex)
    if m.ndim != 2 or m.size == 0:
        raise InvalidInputError(f"Expected a non-empty matrix, got shape {m.shape}")
    if square and m.shape[0] != m.shape[1]:
        raise InvalidInputError(f"Expected a square matrix, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise InvalidInputError("Matrix has non-finite entries")
    return m


def rng_from(seed: SeedLike) -> np.random.Generator:
    return np.random.default_rng(seed)


def operator_norm(m: Any) -> float:
    """Largest singular value of ``m``."""
    return float(np.linalg.norm(as_matrix(m), 2))


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b - b @ a


def unitarity_defect(u: np.ndarray) -> float:
    u = as_matrix(u, square=True)
    return operator_norm(u.conj().T @ u - np.eye(u.shape[0]))


def hermitian_defect(h: np.ndarray) -> float:
    return float(np.abs(h - h.conj().T).max())


def polar(x: Any, *, tol: float = SINGULAR_TOL) -> np.ndarray:
    """Unitary part of the polar decomposition, ``X (X^H X)^{-1/2}``.

    Computed from the singular value decomposition ``X = W S V^H`` as ``W V^H``. A matrix with a singular value at or
    below ``tol`` has no well defined unitary part and raises :class:`RankDeficientError`.
    """
    x = as_matrix(x, square=True)
    w, s, vh = np.linalg.svd(x)
    if s[-1] <= tol:
        raise RankDeficientError(f"Matrix is singular: smallest singular value {s[-1]:.3e}")
    return w @ vh


@dataclass(frozen=True)
class HermitianEig:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def apply(self, f: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """Evaluate ``f`` on the operator through its spectral decomposition."""
        values = np.asarray(f(self.eigenvalues))
        return (self.eigenvectors * values) @ self.eigenvectors.conj().T

    def reconstruct(self) -> np.ndarray:
        return self.apply(lambda x: x)


def hermitian_eig(h: Any, *, tol: float = HERMITIAN_TOL) -> HermitianEig:
    h = as_matrix(h, square=True)
    scale = max(1.0, float(np.abs(h).max()))
    if hermitian_defect(h) > tol * scale:
        raise InvalidInputError(f"Matrix is not Hermitian: defect {hermitian_defect(h):.3e}")

    values, vectors = np.linalg.eigh((h + h.conj().T) / 2)
    return HermitianEig(values, vectors)


def hermitian_function(f: Callable[[np.ndarray], np.ndarray], h: Any, *, tol: float = HERMITIAN_TOL) -> np.ndarray:
    """Apply a real function to a Hermitian matrix."""
    return hermitian_eig(h, tol=tol).apply(f)


@dataclass(frozen=True)
class JointEigenbasis:
    """A unitary that diagonalizes a family of commuting unitaries.

    ``phases[i][j]`` is the angle in ``[0, 2pi)`` of the eigenvalue of the ``i``-th unitary on basis column ``j``.
    ``residual`` is the largest off-diagonal Frobenius mass left after conjugation.
    """

    basis: np.ndarray
    phases: tuple[np.ndarray, ...]
    residual: float = 0.0

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    def eigenvalues(self, i: int) -> np.ndarray:
        return np.exp(1j * self.phases[i])

    def reconstruct(self, i: int) -> np.ndarray:
        return (self.basis * self.eigenvalues(i)) @ self.basis.conj().T

    def to_basis(self, m: np.ndarray) -> np.ndarray:
        return self.basis.conj().T @ m @ self.basis

    def from_basis(self, m: np.ndarray) -> np.ndarray:
        return self.basis @ m @ self.basis.conj().T


def _clusters(values: np.ndarray, tol: float) -> list[np.ndarray]:
    spread = max(1.0, float(values[-1] - values[0]))
    cuts = np.flatnonzero(np.diff(values) > tol * spread) + 1
    return np.split(np.arange(len(values)), cuts)


def _split(us: list[np.ndarray], rng: np.random.Generator, depth: int, tol: float) -> np.ndarray:
    k = us[0].shape[0]
    coeffs = rng.standard_normal((len(us), 2))
    h = np.zeros((k, k), dtype=complex)
    for (a, b), u in zip(coeffs, us):
        h += a * (u + u.conj().T) / 2 + b * (u - u.conj().T) / 2j

    values, vectors = np.linalg.eigh(h)
    columns = []
    for cluster in _clusters(values, CLUSTER_TOL):
        q = vectors[:, cluster]
        if len(cluster) > 1:
            restricted = [q.conj().T @ u @ q for u in us]
            # Rescale the non-scalar part so the next combination separates it at unit scale
            shifted = []
            for r in restricted:
                r = r - np.mean(np.diag(r)) * np.eye(len(cluster))
                norm = float(np.abs(r).max())
                if norm > tol:
                    shifted.append(r / norm)

            if shifted:
                if depth >= MAX_SPLIT_DEPTH:
                    log.warning("Cluster of size %d left unsplit at depth %d", len(cluster), depth)
                else:
                    log.debug("Splitting degenerate cluster of size %d at depth %d", len(cluster), depth)
                    q = q @ _split(shifted, rng, depth + 1, tol)
        columns.append(q)

    return np.hstack(columns)


def joint_diagonalize(
    us: Sequence[np.ndarray], *, seed: SeedLike = 0, tol: float = COMMUTING_TOL
) -> JointEigenbasis:
    """Find a common eigenbasis of pairwise commuting unitaries.

    A random Hermitian combination of the real and imaginary parts of the inputs is diagonalized. Eigenvalue clusters
    on which some input is not yet scalar are split recursively with a fresh combination.
    """
    us = [as_matrix(u, square=True) for u in us]
    if not us:
        raise InvalidInputError("Need at least one unitary")
    if len({u.shape for u in us}) != 1:
        raise InvalidInputError("Unitaries have different dimensions")

    for i in range(len(us)):
        for j in range(i + 1, len(us)):
            value = operator_norm(commutator(us[i], us[j]))
            if value > tol:
                raise NotCommutingError(f"Commutator of unitaries {i} and {j} has norm {value:.3e} > {tol:.1e}")

    basis = _split(us, rng_from(seed), 0, tol)

    phases = []
    residual = 0.0
    for u in us:
        m = basis.conj().T @ u @ basis
        diagonal = np.diag(m)
        residual = max(residual, float(np.linalg.norm(m - np.diag(diagonal))))
        angles = np.mod(np.angle(diagonal), 2 * np.pi)
        phases.append(np.where(angles >= 2 * np.pi, 0.0, angles))

    log.debug("Joint diagonalization of %d unitaries, residual %.3e", len(us), residual)
    return JointEigenbasis(basis, tuple(phases), residual)


def haar_unitary(k: int, seed: SeedLike = None) -> np.ndarray:
    """Sample a Haar distributed ``k x k`` unitary.

    QR decomposition of a complex Ginibre matrix, with the phases of the diagonal of R moved into Q.
    """
    if k < 1:
        raise InvalidInputError(f"Dimension must be positive, got {k}")

    rng = rng_from(seed)
    z = (rng.standard_normal((k, k)) + 1j * rng.standard_normal((k, k))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))


def clock_shift_pair(k: int) -> tuple[np.ndarray, np.ndarray]:
    """Clock and shift unitaries in dimension ``k``."""
    if k < 2:
        raise InvalidInputError(f"Dimension must be at least 2, got {k}")

    clock = np.diag(np.exp(2j * np.pi * np.arange(k) / k))
    shift = np.roll(np.eye(k, dtype=complex), 1, axis=0)
    return clock, shift


def matrix_to_json(m: np.ndarray) -> dict:
    m = as_matrix(m)
    return {
        "rows": m.shape[0],
        "cols": m.shape[1],
        "data": [[float(z.real), float(z.imag)] for z in m.ravel()],
    }


def matrix_from_json(obj: dict) -> np.ndarray:
    try:
        rows, cols, data = int(obj["rows"]), int(obj["cols"]), obj["data"]
    except (KeyError, TypeError, ValueError) as e:
        raise InvalidInputError(f"Malformed matrix object: {e}")

    if len(data) != rows * cols:
        raise InvalidInputError(f"Matrix data has {len(data)} entries, expected {rows * cols}")

    values = np.array([complex(re, im) for re, im in data], dtype=complex)
    return as_matrix(values.reshape(rows, cols))


def dumps_matrices(matrices: dict[str, np.ndarray], **extra: Any) -> str:
    """Serialize named matrices, plus plain JSON values, to a JSON string."""
    payload = dict(extra)
    payload["matrices"] = {name: matrix_to_json(m) for name, m in matrices.items()}
    return json.dumps(payload, sort_keys=True)


def loads_matrices(text: str) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    """Inverse of :func:`dumps_matrices`, returning the matrices and the extra values."""
    try:
        payload = json.loads(text)
        matrices = payload.pop("matrices")
    except (json.JSONDecodeError, KeyError, AttributeError) as e:
        raise InvalidInputError(f"Malformed matrix bundle: {e}")
    return {name: matrix_from_json(obj) for name, obj in matrices.items()}, payload
