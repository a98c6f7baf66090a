import numpy as np
import pytest
from hypothesis import given, strategies as st

from conictrl.config import DEFAULT
from conictrl.errors import InvalidInputError, InvalidModelError, TrackingError
from conictrl.hermitian import (
    EigenSystem,
    OperatorQuadruple,
    assemble,
    band_projection,
    eig_sorted,
    eigensystem,
    track_basis,
)

from conftest import random_hermitian

SZ = np.diag([1.0, -1.0]).astype(complex)


def test_assemble_pauli_z(pauli):
    assert np.allclose(assemble(pauli, [0, 0, 1]), SZ)


def test_assemble_ricci_origin(ricci):
    assert np.array_equal(assemble(ricci, [0, 0, 0]), np.diag([0, 0, 1]).astype(complex))


def test_assemble_against_scalar_loop():
    rng = np.random.default_rng(3)
    n = 4
    mats = [random_hermitian(rng, n) for _ in range(4)]
    quad = OperatorQuadruple(*mats)
    u = rng.normal(size=3)
    ref = np.zeros((n, n), complex)
    for r in range(n):
        for c in range(n):
            ref[r, c] = mats[0][r, c] + sum(u[i] * mats[i + 1][r, c] for i in range(3))
    assert np.allclose(assemble(quad, u), ref, atol=1e-14)


def test_assemble_batch_shape(ricci):
    pts = np.zeros((5, 7, 3))
    assert assemble(ricci, pts).shape == (5, 7, 3, 3)


def test_non_hermitian_quad_rejected():
    bad = np.array([[0, 1], [0, 0]], complex)
    with pytest.raises(InvalidModelError):
        OperatorQuadruple(bad, np.eye(2), np.eye(2), np.eye(2))


def test_eig_sorted_sigma_z():
    es = eig_sorted(SZ)
    assert np.allclose(es.values, [-1, 1])


def test_eig_sorted_ricci_double(ricci):
    es = eigensystem(ricci, np.zeros(3))
    assert np.allclose(es.values, [0, 0, 1])
    assert es.degenerate == (0,)


def test_eig_sorted_against_characteristic_polynomial():
    rng = np.random.default_rng(11)
    h = random_hermitian(rng, 6)
    roots = np.sort(np.real(np.roots(np.poly(h))))
    assert np.allclose(eig_sorted(h).values, roots, atol=1e-8)


def test_eig_sorted_rejects_non_hermitian():
    with pytest.raises(InvalidInputError):
        eig_sorted(np.array([[0, 1], [0, 0]], complex))


def test_track_identity():
    es = eig_sorted(random_hermitian(np.random.default_rng(0), 4))
    tr = track_basis(es, es)
    assert np.array_equal(tr.order, np.arange(4))
    assert np.allclose(tr.vectors, es.vectors)


def test_track_recovers_swap_and_phase():
    es = eig_sorted(random_hermitian(np.random.default_rng(1), 3))
    v = es.vectors.copy()
    v[:, [0, 1]] = v[:, [1, 0]]
    v *= np.exp(1j * np.pi / 3)
    shuffled = EigenSystem(None, es.values[[1, 0, 2]], v)
    tr = track_basis(es, shuffled)
    assert np.allclose(tr.vectors, es.vectors, atol=1e-12)
    assert np.allclose(tr.values, es.values)


def test_track_along_ricci_segment(ricci):
    prev = eigensystem(ricci, [0.1, 0, 0])
    worst = 1.0
    for t in np.linspace(0.1, 0.2, 101)[1:]:
        prev = track_basis(prev, eigensystem(ricci, [t, 0, 0]))
        worst = min(worst, float(np.min(prev.overlaps)))
    assert worst > 0.999


def test_track_raises_on_jump():
    a = eig_sorted(np.diag([0.0, 1.0]).astype(complex))
    rotated = EigenSystem(None, np.array([0.0, 1.0]), np.array([[1, 1], [1, -1]], complex) / np.sqrt(2))
    with pytest.raises(TrackingError):
        track_basis(a, rotated, DEFAULT.replace(min_overlap=0.8))


def test_band_projection_ricci(ricci):
    p = band_projection(eigensystem(ricci, np.zeros(3)), 0)
    assert np.allclose(p, np.diag([1, 1, 0]))
    assert np.isclose(np.trace(p).real, 2)


def test_band_projection_sigma_z():
    assert np.allclose(band_projection(eig_sorted(SZ), 0), np.eye(2))


@given(st.integers(0, 2**32 - 1))
def test_band_projection_identities(seed):
    rng = np.random.default_rng(seed)
    h = random_hermitian(rng, 5)
    p = band_projection(eig_sorted(h), 1)
    assert np.allclose(p @ p, p, atol=1e-10)
    assert np.allclose(p, p.conj().T)
    assert np.isclose(np.trace(p).real, 2)
    assert np.allclose(p @ h, h @ p, atol=1e-9)


@given(st.integers(0, 2**32 - 1))
def test_eigenvectors_orthonormal(seed):
    es = eig_sorted(random_hermitian(np.random.default_rng(seed), 4))
    assert np.allclose(es.vectors.conj().T @ es.vectors, np.eye(4), atol=1e-10)
