"""Limit eigenbases at an intersection and the change of basis across it.

Along a ray u_bar + t v the eigenvectors of the band extend analytically
to t = 0, and the limits depend on v.  For an inbound limit basis (phi_j^0,
phi_{j+1}^0) taken along the ray direction d0, the limit basis along any
other ray v is

    phi_j^v     =  cos(Xi) phi_j^0 + e^{-i beta} sin(Xi) phi_{j+1}^0
    phi_{j+1}^v = -e^{i beta} sin(Xi) phi_j^0 + cos(Xi) phi_{j+1}^0

up to phases, where beta = arg b, tan(2 Xi) = -2|b| / a with
b = <phi_j^0, H_v phi_{j+1}^0> and a = <phi_{j+1}^0, H_v phi_{j+1}^0> - <phi_j^0, H_v phi_j^0>.
The branch Xi in [-pi/2, 0] is used, so Xi(d0) = 0 and Xi(-d0) = -pi/2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import DEFAULT, Tolerances
from .conicity import RealConicityMatrix, real_conicity
from .errors import ExtrapolationError, NotConicalError, TrackingError
from .hermitian import (
    EigenSystem,
    OperatorQuadruple,
    assemble,
    control_hamiltonian,
    eig_sorted,
    eigensystem,
    track_basis,
)


def subspace_distance(a, b) -> float:
    """Sine of the angle between the rays spanned by unit vectors a and b."""
    c = abs(np.vdot(a, b))
    return float(np.sqrt(max(0.0, 1.0 - c * c)))


@dataclass(frozen=True, eq=False)
class LimitBasis:
    phi_lo: np.ndarray
    phi_hi: np.ndarray
    direction: np.ndarray
    extrapolation_t: float
    history: tuple = ()

    def pair(self):
        return self.phi_lo, self.phi_hi


def _unit(v):
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError("direction must be nonzero")
    return v / n


def _orthonormalize(a, b):
    q, _ = np.linalg.qr(np.column_stack([a, b]))
    # QR may flip phases; restore the overlap with the input
    for k, x in enumerate((a, b)):
        o = np.vdot(q[:, k], x)
        q[:, k] *= o / abs(o)
    return q[:, 0], q[:, 1]


def limit_basis(
    quad: OperatorQuadruple,
    u_bar,
    j: int,
    v,
    t_seq=None,
    tol: Tolerances = DEFAULT,
) -> LimitBasis:
    """Limit of (phi_j, phi_{j+1}) along the ray u_bar + t v as t -> 0+.

    Eigenpairs are computed on a decreasing geometric sequence of t,
    aligned from the largest t down, and extrapolated linearly (Richardson
    with ratio 2).  Successive extrapolants must agree within
    ``tol.limit_basis`` in subspace distance.
    """
    u_bar = np.asarray(u_bar, dtype=float)
    v = _unit(v)
    if t_seq is None:
        t_seq = 1e-2 * 0.5 ** np.arange(12)
    t_seq = np.asarray(t_seq, dtype=float)
    if np.any(np.diff(t_seq) >= 0) or np.any(t_seq <= 0):
        raise ValueError("t_seq must be positive and strictly decreasing")
    prev = None
    vecs = []
    for t in t_seq:
        es = eigensystem(quad, u_bar + t * v, tol)
        if es.gap(j) <= tol.degeneracy * quad.scale():
            raise ExtrapolationError(f"levels {j},{j + 1} stay degenerate along {v} at t={t:g}")
        if prev is not None:
            try:
                es = track_basis(prev, es, tol)
            except TrackingError as exc:
                raise ExtrapolationError(str(exc)) from exc
            if es.order is not None and (es.order[j] != j or es.order[j + 1] != j + 1):
                raise ExtrapolationError(f"levels reorder along the ray {v}")
        prev = es
        vecs.append((es.phi(j).copy(), es.phi(j + 1).copy()))
    history = []
    last = None
    for k in range(1, len(vecs)):
        ratio = t_seq[k - 1] / t_seq[k]
        ext = [(ratio * vecs[k][i] - vecs[k - 1][i]) / (ratio - 1.0) for i in (0, 1)]
        ext = _orthonormalize(ext[0], ext[1])
        if last is not None:
            d = max(subspace_distance(ext[0], last[0]), subspace_distance(ext[1], last[1]))
            history.append(d)
            if d < tol.limit_basis:
                return LimitBasis(ext[0], ext[1], v, float(t_seq[k]), tuple(history))
        last = ext
    raise ExtrapolationError(
        f"limit basis along {v} did not converge (last change {history[-1] if history else np.nan:.2e})"
    )


def degenerate_limit_basis(quad: OperatorQuadruple, u_bar, j: int, v) -> LimitBasis:
    """Limit basis by first-order degenerate perturbation theory.

    Diagonalises H_v restricted to the double eigenspace at u_bar.  This is
    an independent route to the same pair as :func:`limit_basis`.
    """
    v = _unit(v)
    es = eig_sorted(assemble(quad, u_bar))
    q = es.vectors[:, j : j + 2]
    hv = control_hamiltonian(quad, v)
    w, c = np.linalg.eigh(q.conj().T @ hv @ q)
    vecs = q @ c
    return LimitBasis(vecs[:, 0], vecs[:, 1], v, 0.0)


@dataclass(frozen=True)
class TransferAngles:
    xi: float
    beta: float
    beta_defined: bool = True
    direction: tuple | None = None

    @property
    def stay(self) -> float:
        """|cos Xi|: amplitude kept on the lower level of the pair."""
        return abs(np.cos(self.xi))

    @property
    def move(self) -> float:
        return abs(np.sin(self.xi))


def band_elements(quad: OperatorQuadruple, basis: LimitBasis, v):
    """(b, a) for H_v in the given pair: off-diagonal and diagonal difference."""
    hv = control_hamiltonian(quad, _unit(v))
    lo, hi = basis.pair()
    b = complex(np.vdot(lo, hv @ hi))
    a = float(np.real(np.vdot(hi, hv @ hi) - np.vdot(lo, hv @ lo)))
    return b, a


def xi_beta(
    quad: OperatorQuadruple,
    u_bar,
    j: int,
    inbound: LimitBasis,
    v,
    tol: Tolerances = DEFAULT,
    parallel_tol: float = 1e-12,
) -> TransferAngles:
    """Transfer angles from the inbound limit basis to the limit basis along ``v``."""
    v = _unit(v)
    d0 = inbound.direction
    b, a = band_elements(quad, inbound, v)
    if abs(b) < 1e-14 and abs(a) < 1e-14:
        raise NotConicalError(f"H_v vanishes on the band for v={v}; intersection not conical")
    c = float(np.dot(v, d0))
    if c > 1.0 - parallel_tol:
        return TransferAngles(0.0, 0.0, False, tuple(v))
    if c < -1.0 + parallel_tol:
        return TransferAngles(-np.pi / 2, 0.0, False, tuple(v))
    xi = 0.5 * np.arctan2(-2.0 * abs(b), a)
    return TransferAngles(float(xi), float(np.angle(b)) % (2 * np.pi), True, tuple(v))


def apply_limit_transformation(inbound: LimitBasis, angles: TransferAngles) -> LimitBasis:
    c, s = np.cos(angles.xi), np.sin(angles.xi)
    e = np.exp(1j * angles.beta)
    lo, hi = inbound.pair()
    new_lo = c * lo + s / e * hi
    new_hi = -e * s * lo + c * hi
    direction = inbound.direction if angles.direction is None else np.asarray(angles.direction)
    return LimitBasis(new_lo, new_hi, direction, 0.0)


def inbound_conicity(quad: OperatorQuadruple, inbound: LimitBasis, tol: Tolerances = DEFAULT) -> RealConicityMatrix:
    """M~ built on the inbound limit basis."""
    return real_conicity(quad, inbound.phi_lo, inbound.phi_hi, tag=f"limit{tuple(np.round(inbound.direction, 6))}", tol=tol)


# --- effective Hamiltonian ---------------------------------------------------


def _tracked(quad, path, taus, tol):
    centre = eigensystem(quad, path(taus[1]), tol)
    out = {}
    for t in (taus[0], taus[2]):
        out[t] = track_basis(centre, eigensystem(quad, path(t), tol), tol)
    return out[taus[0]], centre, out[taus[2]]


def geometric_term(quad: OperatorQuadruple, path, tau: float, band=(0, 1), dtau: float = 1e-4, tol: Tolerances = DEFAULT):
    """G_ab = <Phi_b, dPhi_a/dtau> on the band, by central differences."""
    j0, j1 = band
    lo, c, hi = _tracked(quad, path, (tau - dtau, tau, tau + dtau), tol)
    phi = c.vectors[:, j0 : j1 + 1]
    dphi = (hi.vectors[:, j0 : j1 + 1] - lo.vectors[:, j0 : j1 + 1]) / (2 * dtau)
    # row a, column b: <Phi_b, dPhi_a>
    g = (phi.conj().T @ dphi).T
    return g, c.values[j0 : j1 + 1]


def effective_hamiltonian(
    quad: OperatorQuadruple,
    path,
    tau: float,
    eps: float,
    band=(0, 1),
    dtau: float = 1e-4,
    gate: float = 1e-6,
    max_halvings: int = 4,
    tol: Tolerances = DEFAULT,
):
    """diag(Lambda) - i eps G on the band (j, j+1) at path parameter ``tau``.

    G is recomputed with the step halved until two successive estimates
    agree within ``gate`` (relative to max(1, |G|)).

    Note the index convention G_ab = <Phi_b, dPhi_a/dtau>: the matrix acts on
    row vectors of band amplitudes.  For column-vector evolution use its
    transpose.
    """
    g, lam = geometric_term(quad, path, tau, band, dtau, tol)
    for _ in range(max_halvings):
        dtau *= 0.5
        g2, lam = geometric_term(quad, path, tau, band, dtau, tol)
        done = np.max(np.abs(g2 - g)) < gate * max(1.0, float(np.max(np.abs(g2))))
        g = g2
        if done:
            break
    return np.diag(lam).astype(complex) - 1j * eps * g
