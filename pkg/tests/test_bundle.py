from __future__ import annotations

import dataclasses

import numpy as np
import pytest
from numpy.testing import assert_allclose

from qmath.workbench.bundle import (
    SPECTRAL_GAP,
    ProjectorField,
    StrictlyLocalOp,
    chern_number,
    commutator_bound_check,
    field_symmetry_defect,
    make_test_bundle,
    map_A,
    map_A_symmetry_defect,
    map_B,
    plateau_filter,
    projector_defect,
    strictly_localize,
    twist,
)
from qmath.workbench.exceptions import InvalidInputError, TooLargeError, UnsupportedError
from qmath.workbench.linalg import commutator, operator_norm
from qmath.workbench.softtorus import random_local_projector
from qmath.workbench.symmetry import SYMMETRIC


@pytest.fixture(scope="module")
def local_op() -> StrictlyLocalOp:
    return strictly_localize(map_A(make_test_bundle(1), 6), np.pi / 2)


@pytest.mark.parametrize("c", [-2, -1, 0, 1, 2])
def test_chern_number_test_bundle(c: int) -> None:
    field = make_test_bundle(c)
    assert field.rank == 1
    value = chern_number(field, 32)
    assert abs(value) == abs(c)
    assert chern_number(make_test_bundle(-c), 32) == -value


def test_chern_number_direct_sum() -> None:
    total = make_test_bundle(1).direct_sum(make_test_bundle(2, dim=3))
    assert total.dim == 5
    assert total.rank == 2
    assert chern_number(total, 32) == chern_number(make_test_bundle(1), 32) + chern_number(make_test_bundle(2), 32)


def test_make_test_bundle_invalid() -> None:
    with pytest.raises(InvalidInputError):
        make_test_bundle(4)
    with pytest.raises(InvalidInputError):
        make_test_bundle(1, dim=1)


def test_projector_field() -> None:
    field = make_test_bundle(1, dim=3)
    e = field.projector([0.3, 1.2])
    assert e.shape == (3, 3)
    assert_allclose(e @ e, e, atol=1e-12)
    assert np.trace(e).real == pytest.approx(1.0)
    assert field.lipschitz(m=8) > 0

    with pytest.raises(InvalidInputError):
        field.frame([0.3])
    with pytest.raises(UnsupportedError):
        chern_number(ProjectorField(1, 2, lambda theta: np.eye(2)[:, :1]))

    json = field.to_json(2)
    assert len(json) == 4
    assert json[0]["theta"] == [0.0, 0.0]


def test_field_symmetry_defect() -> None:
    constant = make_test_bundle(0)
    assert field_symmetry_defect(constant, SYMMETRIC) == pytest.approx(0.0, abs=1e-12)


def symmetric_field() -> ProjectorField:
    # nx and nz even, ny odd in theta gives E(theta) = E(-theta)^T
    def projector(theta: np.ndarray) -> np.ndarray:
        t1, t2 = theta
        n = np.array([np.cos(t1), np.sin(t2), 1.5])
        n /= np.linalg.norm(n)
        return 0.5 * np.array([[1 + n[2], n[0] - 1j * n[1]], [n[0] + 1j * n[1], 1 - n[2]]])

    return ProjectorField.from_projector(2, 2, projector)


def test_map_A_symmetry_defect() -> None:
    field = symmetric_field()
    assert field_symmetry_defect(field, SYMMETRIC) < 1e-12
    assert map_A_symmetry_defect(field, 5) < 1e-10

    twisted = make_test_bundle(1)
    assert field_symmetry_defect(twisted, SYMMETRIC) > 0.1
    assert map_A_symmetry_defect(twisted, 5) > 1e-3


@pytest.mark.parametrize("n", [4, 6, 10])
def test_map_A(n: int) -> None:
    field = make_test_bundle(1)
    p = map_A(field, n)

    assert p.dim == 2 * n * n
    assert p.rank == n * n
    assert operator_norm(commutator(*p.unitaries)) < 1e-12
    assert p.measured_epsilon <= 2 * np.pi * field.lipschitz(m=n) / n + 1e-9
    for i in range(2):
        assert_allclose(p.eigenbasis.reconstruct(i), p.unitaries[i], atol=1e-10)


def test_map_A_invalid() -> None:
    with pytest.raises(InvalidInputError):
        map_A(make_test_bundle(1), 2)
    with pytest.raises(TooLargeError):
        map_A(make_test_bundle(1), 50)


def test_plateau_filter() -> None:
    assert_allclose(plateau_filter(np.array([0.0, 0.5, -0.95])), 1.0)
    assert_allclose(plateau_filter(np.array([-1.0, 1.0, 2.0])), 0.0)
    x = np.linspace(-0.99, 0.99, 23)
    values = plateau_filter(x)
    assert_allclose(values, plateau_filter(-x))
    assert ((values >= 0) & (values <= 1)).all()
    assert np.all(np.diff(plateau_filter(np.linspace(0.95, 1.0, 11))) <= 0)

    assert_allclose(plateau_filter(np.array([0.6]), plateau=0.0), plateau_filter(np.array([-0.6]), plateau=0.0))
    assert 0 < plateau_filter(np.array([0.6]), plateau=0.0)[0] < 1
    with pytest.raises(InvalidInputError):
        plateau_filter(np.array([0.0]), plateau=1.0)



def test_strictly_localize(local_op: StrictlyLocalOp) -> None:
    h = local_op
    assert h.d == 2
    assert_allclose(h.matrix, h.matrix.conj().T, atol=1e-12)
    assert h.error >= 0

    for i in range(h.d):
        u = h.basis.eigenvalues(i)
        margin = h.cutoff + 1e-9
        dx = np.abs(u.real[:, None] - u.real[None, :])
        dy = np.abs(u.imag[:, None] - u.imag[None, :])
        far = (dx >= margin) | (dy >= margin)
        assert (h.matrix[far] == 0).all()

    with pytest.raises(InvalidInputError):
        strictly_localize(map_A(make_test_bundle(1), 4), 2.0)


def test_commutator_bound_check(local_op: StrictlyLocalOp) -> None:
    p = map_A(make_test_bundle(1), 6)
    dense = local_op.dense()
    expected = max(operator_norm(commutator(dense, u)) for u in p.unitaries)
    assert commutator_bound_check(local_op, [0.0, 0.0]) == pytest.approx(expected, abs=1e-10)


def test_twist(local_op: StrictlyLocalOp) -> None:
    h = local_op
    assert np.array_equal(twist(h, [0.0, 0.0]), h.matrix)

    twisted = twist(h, [0.7, -1.3])
    assert_allclose(twisted, twisted.conj().T, atol=1e-12)
    assert_allclose(np.abs(twisted), np.abs(h.matrix), atol=1e-12)
    assert_allclose(twist(h, [2 * np.pi, 0.0]), h.matrix, atol=1e-12)
    assert_allclose(twist(h, [0.0, -2 * np.pi]), h.matrix, atol=1e-12)
    assert projector_defect(h, [0.0, 0.0]) >= 0

    with pytest.raises(InvalidInputError):
        twist(h, [0.1])


@pytest.mark.parametrize("c", [-1, 0, 1])
def test_ab_roundtrip_chern(c: int) -> None:
    field = make_test_bundle(c)
    back = map_B(map_A(field, 12), np.pi / 4, 24, validate=False)
    assert back.rank == 12 * 12
    assert back.source.error < 0.5 - SPECTRAL_GAP
    assert chern_number(back, 24) == chern_number(field, 24)
    assert abs(chern_number(back, 24)) == abs(c)


def test_strictly_localize_constant() -> None:
    # |H - P| <= C eps / S with a single C over the sweep
    cutoff = np.sqrt(2) * np.sin(np.pi / 8)
    points = {}
    for n in (8, 12, 16):
        p = map_A(make_test_bundle(1), n)
        h = strictly_localize(p, np.pi / 4)
        assert h.cutoff == pytest.approx(cutoff)
        assert p.measured_epsilon > 0
        points[n] = (h.error, p.measured_epsilon)

    constant = max(error * cutoff / epsilon for error, epsilon in points.values())
    assert constant < 1.5
    assert all(error <= constant * epsilon / cutoff + 1e-12 for error, epsilon in points.values())
    assert points[12][0] < 0.5 - SPECTRAL_GAP
    assert points[16][0] < 0.5 - SPECTRAL_GAP


def test_strictly_localize_coarse_grid() -> None:
    # on 8 points the grid spacing equals pi / 4, so only equal momenta stay coupled
    h = strictly_localize(map_A(make_test_bundle(1), 8), np.pi / 4)
    same = np.ones(h.matrix.shape, dtype=bool)
    for phi in h.basis.phases:
        same &= np.isclose(phi[:, None], phi[None, :])
    assert (h.matrix[~same] == 0).all()


def test_twist_composes(local_op: StrictlyLocalOp) -> None:
    theta, phi = np.array([0.4, -1.1]), np.array([2.3, 0.9])
    once = dataclasses.replace(local_op, matrix=twist(local_op, theta))
    assert_allclose(twist(once, phi), twist(local_op, theta + phi), atol=1e-10)


@pytest.mark.parametrize("seed", range(50))
def test_twist_norm_bound(seed: int) -> None:
    rng = np.random.default_rng(seed)
    p = random_local_projector(8, 2, 3, 0.3, seed=seed)
    h = strictly_localize(p, rng.uniform(0.2, np.pi / 2))
    theta = rng.uniform(0, 2 * np.pi, 2)
    assert operator_norm(twist(h, theta)) <= 2**h.d * operator_norm(h.matrix) + 1e-12
