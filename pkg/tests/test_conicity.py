import numpy as np
import pytest
from hypothesis import given, strategies as st

from conictrl.conicity import (
    conicity_det,
    conicity_function,
    conicity_matrix,
    cone_constant,
    is_conical,
    real_conicity,
)
from conictrl.errors import InvalidInputError, NotAnIntersectionError
from conictrl.hermitian import OperatorQuadruple

from conftest import random_hermitian, random_unitary

E = np.eye(3)
E2 = np.eye(2)


def _scalar_m(quad, a, b):
    """Matrix elements by explicit sums, independent of the vectorised code."""
    out = np.zeros((3, 3), complex)
    n = quad.dim
    for i, h in enumerate(quad.controls):
        ab = sum(np.conj(a[r]) * h[r, c] * b[c] for r in range(n) for c in range(n))
        aa = sum(np.conj(a[r]) * h[r, c] * a[c] for r in range(n) for c in range(n))
        bb = sum(np.conj(b[r]) * h[r, c] * b[c] for r in range(n) for c in range(n))
        out[i] = (ab, np.conj(ab), bb - aa)
    return out


def test_pauli_matrix(pauli):
    m = conicity_matrix(pauli, E2[0], E2[1]).m
    assert np.allclose(m, [[1, 1, 0], [-1j, 1j, 0], [0, 0, -2]])
    assert np.allclose(m, _scalar_m(pauli, E2[0], E2[1]))


def test_ricci_det(ricci):
    assert abs(conicity_det(conicity_matrix(ricci, E[0], E[1])) - (-2j)) < 1e-12


def test_pauli_det(pauli):
    assert abs(conicity_det(conicity_matrix(pauli, E2[0], E2[1])) - (-4j)) < 1e-12


def test_diagonal_quad_third_column_only():
    d = [np.diag(x).astype(complex) for x in ([0, 0, 0], [1, 2, 3], [0, -1, 4], [2, 2, 5])]
    quad = OperatorQuadruple(*d)
    cm = conicity_matrix(quad, E[0], E[2])
    assert np.allclose(cm.m[:, :2], 0)
    assert np.allclose(cm.third_column, [2, 4, 3])


def test_pauli_real_swapped(pauli):
    mt = real_conicity(pauli, E2[1], E2[0]).mt
    assert np.allclose(mt, [[1, 0, 0], [0, 1, 0], [0, 0, 2]])


def test_ricci_real_det(ricci):
    assert np.isclose(real_conicity(ricci, E[0], E[1]).det(), 1.0)


def test_zero_controls():
    z = np.zeros((2, 2), complex)
    rc = real_conicity(OperatorQuadruple(z, z, z, z), E2[0], E2[1])
    assert np.array_equal(rc.mt, np.zeros((3, 3)))
    assert rc.det() == 0.0


def test_pair_must_be_orthonormal(ricci):
    with pytest.raises(InvalidInputError):
        conicity_matrix(ricci, E[0], E[0])
    with pytest.raises(InvalidInputError):
        conicity_matrix(ricci, 2 * E[0], E[1])


@given(st.integers(0, 2**32 - 1))
def test_det_invariant_under_u2(seed):
    rng = np.random.default_rng(seed)
    quad = OperatorQuadruple(*[random_hermitian(rng, 4) for _ in range(4)])
    q, _ = np.linalg.qr(rng.normal(size=(4, 2)) + 1j * rng.normal(size=(4, 2)))
    d0 = conicity_det(conicity_matrix(quad, q[:, 0], q[:, 1]))
    r = q @ random_unitary(rng, 2)
    d1 = conicity_det(conicity_matrix(quad, r[:, 0], r[:, 1]))
    assert abs(d1 - d0) < 1e-9 * (1 + abs(d0))
    assert abs(d0.real) < 1e-12 * (1 + abs(d0))


@given(st.integers(0, 2**32 - 1))
def test_complex_and_real_determinants(seed):
    rng = np.random.default_rng(seed)
    quad = OperatorQuadruple(*[random_hermitian(rng, 3) for _ in range(4)])
    q = random_unitary(rng, 3)
    d = np.linalg.det(conicity_matrix(quad, q[:, 0], q[:, 1]).m)
    dt = real_conicity(quad, q[:, 0], q[:, 1]).det()
    assert abs(d - (-2j) * dt) <= 1e-10 * max(1.0, abs(d))


def test_conicity_function_origin(ricci):
    assert abs(conicity_function(ricci, np.zeros(3), 0) + 2j) < 1e-12


def test_is_conical_ricci(ricci):
    dec = is_conical(ricci, np.zeros(3), 0)
    assert dec.conical and np.isclose(dec.abs_det, 2.0)


def test_is_conical_pauli(pauli):
    dec = is_conical(pauli, np.zeros(3), 0)
    assert dec.conical and np.isclose(dec.abs_det, 4.0)


def test_real_symmetric_controls_not_conical():
    sx = np.array([[0, 1], [1, 0]], complex)
    sz = np.diag([1, -1]).astype(complex)
    z = np.zeros((2, 2), complex)
    dec = is_conical(OperatorQuadruple(z, sx, sz, z), np.zeros(3), 0)
    assert not dec.conical
    assert dec.abs_det < 1e-12


def test_is_conical_requires_degeneracy(ricci):
    with pytest.raises(NotAnIntersectionError):
        is_conical(ricci, [0.2, 0, 0], 0)


def test_cone_constant_pauli(pauli):
    dirs = np.random.default_rng(0).normal(size=(10, 3))
    assert np.isclose(cone_constant(pauli, np.zeros(3), 0, dirs, [1e-3, 1e-2]), 2.0)
