import numpy as np
import pytest
from hypothesis import given, strategies as st

from conictrl import (
    InvalidInputError,
    QuantumState,
    adiabatic_reference,
    eigensystem,
    epsilon_sweep,
    fit_slope,
    propagate,
    transfer_error,
)
from conictrl.errors import AtIntersectionError
from conictrl.paths import constant_path, straight_path

from conftest import random_hermitian


def test_state_norm_checked():
    with pytest.raises(InvalidInputError):
        QuantumState([1.0, 1.0])
    with pytest.raises(InvalidInputError):
        QuantumState(np.eye(2))


def test_stationary_phase_on_constant_path(pauli):
    u = np.array([0.3, -0.2, 0.9])
    es = eigensystem(pauli, u)
    eps = 0.05
    res = propagate(pauli, constant_path(u), eps, es.phi(0), steps_per_unit=200)
    assert res.occupations[0] == pytest.approx(1.0, abs=1e-12)
    overlap = np.vdot(es.phi(0), res.final_state.psi)
    assert overlap == pytest.approx(np.exp(-1j * es.values[0] / eps), abs=1e-9)


def test_norm_drift_small(ricci):
    path = straight_path([0, 0, -0.5], [0.4, 0.3, 0.2])
    res = propagate(ricci, path, 0.05, QuantumState.eigenstate(ricci, [0, 0, -0.5]), steps_per_unit=400)
    assert res.norm_drift < 1e-10
    assert res.wall_steps == int(np.ceil(400 / 0.05))


def test_gap_protected_segment_stays_adiabatic(pauli):
    a, b = np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.5, 0.2])
    path = straight_path(a, b)
    psi0 = QuantumState.eigenstate(pauli, a)
    for eps in (0.02, 0.01):
        res = propagate(pauli, path, eps, psi0, steps_per_unit=400)
        assert 1.0 - res.occupations[0] < 5 * eps


def test_reference_matches_on_constant_path(ricci):
    u = [0.2, 0.1, -0.3]
    psi0 = QuantumState.eigenstate(ricci, u, 1)
    path = constant_path(u)
    a = propagate(ricci, path, 0.1, psi0, steps_per_unit=100)
    b = adiabatic_reference(ricci, path, 0.1, psi0, steps_per_unit=100)
    assert np.linalg.norm(a.final_state.psi - b.final_state.psi) < 1e-12


def test_reference_conserves_level_weights(ricci):
    a = [0.0, 0.0, -0.5]
    path = straight_path(a, [0.4, 0.3, 0.2])
    rng = np.random.default_rng(3)
    es = eigensystem(ricci, a)
    c = rng.normal(size=3) + 1j * rng.normal(size=3)
    c /= np.linalg.norm(c)
    res = adiabatic_reference(ricci, path, 0.05, es.vectors @ c, steps_per_unit=400)
    assert np.allclose(res.occupations, np.abs(c) ** 2, atol=1e-6)


@given(st.integers(0, 2**32 - 1))
def test_transfer_error_zero_for_target_with_any_phases(seed):
    rng = np.random.default_rng(seed)
    es = eigensystem_from(random_hermitian(rng, 4))
    p = np.abs(rng.normal(size=2))
    p /= np.linalg.norm(p)
    psi = es.vectors[:, :2] @ (p * np.exp(1j * rng.uniform(0, 2 * np.pi, 2)))
    assert transfer_error(psi, es, p) < 1e-7


def eigensystem_from(h):
    from conictrl.hermitian import eig_sorted

    return eig_sorted(h)


def test_transfer_error_orthogonal_level(pauli):
    es = eigensystem(pauli, [0, 0, 1])
    assert transfer_error(es.phi(0), es, [0.0, 1.0]) == pytest.approx(np.sqrt(2))


def test_transfer_error_against_phase_grid():
    rng = np.random.default_rng(11)
    es = eigensystem_from(random_hermitian(rng, 3))
    psi = rng.normal(size=3) + 1j * rng.normal(size=3)
    psi /= np.linalg.norm(psi)
    p = np.array([0.6, 0.8])
    th = np.linspace(0, 2 * np.pi, 401)
    t1, t2 = np.meshgrid(th, th, indexing="ij")
    cand = p[0] * np.exp(1j * t1)[..., None] * es.phi(0) + p[1] * np.exp(1j * t2)[..., None] * es.phi(1)
    brute = np.min(np.linalg.norm(cand - psi, axis=-1))
    assert transfer_error(psi, es, p) == pytest.approx(brute, abs=1e-3)
    assert transfer_error(psi, es, p) <= brute + 1e-12


def test_transfer_error_refuses_degenerate_endpoint(pauli):
    es = eigensystem(pauli, [0, 0, 0])
    with pytest.raises(AtIntersectionError):
        transfer_error([1, 0], es, [1.0, 0.0])


def test_fit_slope_recovers_power():
    e = 2.0 ** -np.arange(2, 8)
    slope, _, res, degenerate = fit_slope(e, 3.0 * e**1.5)
    assert slope == pytest.approx(1.5)
    assert res < 1e-12 and not degenerate


def test_sweep_flags_noise_floor(pauli):
    u = [0, 0, 1.0]
    rep = epsilon_sweep(pauli, constant_path(u), QuantumState.eigenstate(pauli, u), [1.0, 0.0], [0.2, 0.1, 0.05, 0.005], steps_per_unit=20)
    assert rep.degenerate


def test_sweep_validates_eps(pauli):
    path = constant_path([0, 0, 1.0])
    psi0 = QuantumState.eigenstate(pauli, [0, 0, 1.0])
    with pytest.raises(InvalidInputError):
        epsilon_sweep(pauli, path, psi0, [1.0, 0.0], [0.1, 0.05, 0.02])
    with pytest.raises(InvalidInputError):
        epsilon_sweep(pauli, path, psi0, [1.0, 0.0], [0.1, 0.08, 0.06, 0.04])
    with pytest.raises(InvalidInputError):
        propagate(pauli, path, 0.0, psi0)
