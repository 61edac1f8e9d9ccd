from __future__ import annotations

from typing import Callable

import numpy as np
import pytest
from numpy.testing import assert_allclose

from qmath.workbench.exceptions import InvalidInputError, InvalidPovmError
from qmath.workbench.linalg import operator_norm, unitarity_defect
from qmath.workbench.softtorus import SoftTorus, map_G
from qmath.workbench.symmetry import (
    NO_SYMMETRY,
    SELF_DUAL,
    SYMMETRIC,
    SymmetryClass,
    SymmetryTag,
    max_defect,
    pair_form,
    random_class_local_projector,
    random_class_torus,
    range_basis,
    standard_form,
    structured_rank_decomposition,
    symmetric_map_F,
    symmetric_naimark_dilate,
    symmetry_check,
)
from tests.conftest import random_hermitian


def self_dual_hermitian(dim: int, rng: np.random.Generator) -> np.ndarray:
    h = random_hermitian(dim, rng)
    h = (h + SELF_DUAL.conjugate(h)) / 2
    return h / operator_norm(h)


@pytest.mark.parametrize(
    ("name", "tag"),
    [
        ("none", SymmetryTag.NONE),
        ("symmetric", SymmetryTag.SYMMETRIC),
        ("selfdual", SymmetryTag.SELF_DUAL),
        ("self-dual", SymmetryTag.SELF_DUAL),
        ("self_dual", SymmetryTag.SELF_DUAL),
    ],
)
def test_parse(name: str, tag: SymmetryTag) -> None:
    assert SymmetryClass.parse(name).tag is tag


def test_parse_unknown() -> None:
    with pytest.raises(InvalidInputError):
        SymmetryClass.parse("chiral")


@pytest.mark.parametrize("form", [standard_form, pair_form])
def test_forms(form: Callable[[int], np.ndarray]) -> None:
    z = form(6)
    assert_allclose(z.T, -z)
    assert_allclose(z @ z, -np.eye(6))
    with pytest.raises(InvalidInputError):
        form(5)


def test_symmetry_check(rng: np.random.Generator) -> None:
    s = rng.standard_normal((4, 4))
    assert symmetry_check(s + s.T, SYMMETRIC) == 0.0
    assert symmetry_check(s - s.T, SYMMETRIC) > 0.1
    assert symmetry_check(s, NO_SYMMETRY) == 0.0

    assert symmetry_check(np.eye(4), SELF_DUAL) == 0.0
    assert symmetry_check(self_dual_hermitian(4, rng), SELF_DUAL) < 1e-12
    assert symmetry_check(np.diag([1.0, 2.0, 3.0, 4.0]), SELF_DUAL) > 1

    with pytest.raises(InvalidInputError):
        symmetry_check(np.eye(3), SELF_DUAL)
    with pytest.raises(InvalidInputError):
        symmetry_check(np.eye(4), SymmetryClass(SymmetryTag.SELF_DUAL, pair_form(2)))


def test_structured_rank_decomposition_symmetric() -> None:
    v = np.array([[1.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).T / np.array([np.sqrt(2), 1.0])
    p = v @ v.T
    factors = structured_rank_decomposition(p, SYMMETRIC)
    assert len(factors) == 2
    assert all(np.abs(f.imag).max() == 0 for f in factors)
    assert_allclose(sum(f @ f.conj().T for f in factors), p, atol=1e-12)


def test_structured_rank_decomposition_self_dual() -> None:
    p = random_class_local_projector(SELF_DUAL, 6, 2, 4, 0.1, seed=1).projector
    factors = structured_rank_decomposition(p, SELF_DUAL)
    z = standard_form(6)

    assert len(factors) == 2
    for f in factors:
        assert_allclose(f[:, 1], z @ f[:, 0].conj(), atol=1e-12)
        assert_allclose(f.conj().T @ f, np.eye(2), atol=1e-10)
    assert_allclose(sum(f @ f.conj().T for f in factors), p, atol=1e-9)


def test_structured_rank_decomposition_invalid() -> None:
    with pytest.raises(InvalidInputError):
        structured_rank_decomposition(0.5 * np.eye(2), SYMMETRIC)
    with pytest.raises(InvalidInputError):
        structured_rank_decomposition(np.diag([1.0, 0.0, 0.0, 0.0]), SELF_DUAL)

    v = np.array([1.0, 1j]) / np.sqrt(2)
    with pytest.raises(InvalidInputError):
        structured_rank_decomposition(np.outer(v, v.conj()), SYMMETRIC)


@pytest.mark.parametrize("cls", [SYMMETRIC, SELF_DUAL])
def test_range_basis_compression(cls: SymmetryClass) -> None:
    u = random_class_torus(cls, 6, 1, 0.1, seed=2).unitaries[0]
    p = random_class_local_projector(cls, 6, 1, 4, 0.05, seed=3).projector
    basis = range_basis(p, cls)

    assert basis.shape == (6, 4)
    assert_allclose(basis.conj().T @ basis, np.eye(4), atol=1e-10)
    assert_allclose(basis @ basis.conj().T, p, atol=1e-9)
    assert symmetry_check(basis.conj().T @ u @ basis, cls) < 1e-10


def test_symmetric_naimark_dilate_symmetric() -> None:
    e1 = np.array([[0.5, 0.3], [0.3, 0.5]])
    dilation = symmetric_naimark_dilate([e1, np.eye(2) - e1], SYMMETRIC)

    assert dilation.ambient_dim == 4
    assert unitarity_defect(dilation.frame) < 1e-10
    assert_allclose(dilation.restricted(0), e1, atol=1e-10)
    assert_allclose(dilation.restricted(1), np.eye(2) - e1, atol=1e-10)
    assert max_defect([dilation.frame_outcome_projector(o) for o in range(2)], SYMMETRIC) < 1e-8
    assert dilation.metadata == {"class": "symmetric"}


def test_symmetric_naimark_dilate_self_dual(rng: np.random.Generator) -> None:
    e1 = 0.5 * (np.eye(4) + 0.5 * self_dual_hermitian(4, rng))
    elements = [e1, np.eye(4) - e1]
    dilation = symmetric_naimark_dilate(elements, SELF_DUAL)

    assert dilation.ambient_dim == 8
    assert unitarity_defect(dilation.frame) < 1e-8
    for o, e in enumerate(elements):
        assert_allclose(dilation.restricted(o), e, atol=1e-8)

    frame_cls = SymmetryClass(SymmetryTag.SELF_DUAL, dilation.frame_form)
    assert symmetry_check(dilation.frame_projector(), frame_cls) < 1e-8
    assert max_defect([dilation.frame_outcome_projector(o) for o in range(2)], frame_cls) < 1e-8


def test_symmetric_naimark_dilate_invalid() -> None:
    with pytest.raises(InvalidInputError):
        symmetric_naimark_dilate([], SYMMETRIC)
    with pytest.raises(InvalidInputError):
        symmetric_naimark_dilate([np.array([[0.5, 0.5j], [-0.5j, 0.5]]), np.eye(2)], SYMMETRIC)
    with pytest.raises(InvalidPovmError):
        symmetric_naimark_dilate([0.5 * np.eye(2)], SYMMETRIC)


@pytest.mark.parametrize(
    ("cls", "unitaries"),
    [
        (SYMMETRIC, [np.diag([1, 1j, -1, -1j]), np.diag([-1, 1, 1j, 1])]),
        (SELF_DUAL, [np.diag([1, 1j, 1, 1j]), np.diag([-1, 1, -1, 1])]),
    ],
)
def test_symmetric_map_F_on_grid(cls: SymmetryClass, unitaries: list[np.ndarray]) -> None:
    t = SoftTorus(unitaries)
    assert max_defect(t.unitaries, cls) == 0.0

    local = symmetric_map_F(t, cls, 0.5)
    assert local.symmetry.tag is cls.tag
    assert max_defect([*local.unitaries, local.projector], local.symmetry) < 1e-8

    back = map_G(local)
    assert max_defect(back.unitaries, cls) < 1e-8


@pytest.mark.parametrize("cls", [SYMMETRIC, SELF_DUAL])
def test_map_G_preserves_class(cls: SymmetryClass) -> None:
    p = random_class_local_projector(cls, 6, 2, 4, 0.01, seed=5)
    assert max_defect([*p.unitaries, p.projector], cls) < 1e-10

    t = map_G(p)
    assert t.dim == 4
    assert max_defect(t.unitaries, cls) < 1e-8


@pytest.mark.parametrize("cls", [SYMMETRIC, SELF_DUAL])
def test_random_class_torus(cls: SymmetryClass) -> None:
    t = random_class_torus(cls, 6, 2, 0.1, seed=4)
    assert t.d == 2
    assert max_defect(t.unitaries, cls) < 1e-10
    assert 0 < t.measured_epsilon < 2


def test_random_class_local_projector_invalid() -> None:
    with pytest.raises(InvalidInputError):
        random_class_local_projector(SELF_DUAL, 6, 2, 3, 0.1)
    with pytest.raises(InvalidInputError):
        random_class_local_projector(SYMMETRIC, 6, 2, 6, 0.1)
