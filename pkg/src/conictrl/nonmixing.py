"""The non-mixing field of a two-level band and its integral curves.

With m the first column of the conicity matrix built on (phi_j, phi_{j+1}),

    X = (m x m*) / (2i) = ( Im(m2 m3*), Im(m3 m1*), Im(m1 m2*) ).

X does not depend on the phases of the eigenvectors, and along its flow the
gap lambda_{j+1} - lambda_j changes at the rate F / (2i).  Flowing in the
gap-decreasing orientation therefore runs into the conical intersection in
finite time.

Curves are integrated with RK4 in arclength.  Alongside u we integrate the
time of the (unnormalised) field flow, so that ``IntegralCurve.times`` is
the parameter in which d(gap)/dt = F/(2i) holds.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .config import DEFAULT, Tolerances
from .conicity import _check_pair, matrix_elements
from .errors import (
    AtIntersectionError,
    ConstructionError,
    FieldDegenerateError,
    InsufficientDataError,
    SeparationError,
)
from .hermitian import OperatorQuadruple, assemble, band_separation, eig_batch

log = logging.getLogger(__name__)


def m_vector(quad: OperatorQuadruple, psi1, psi2, tol: Tolerances = DEFAULT) -> np.ndarray:
    """(<psi1,H1 psi2>, <psi1,H2 psi2>, <psi1,H3 psi2>)."""
    psi1, psi2 = _check_pair(psi1, psi2, tol)
    return matrix_elements(quad, psi1, psi2)[0]


def x_from_m(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m)
    return np.imag(np.stack([m[..., 1] * m[..., 2].conj(), m[..., 2] * m[..., 0].conj(), m[..., 0] * m[..., 1].conj()], -1))


def x_field(quad: OperatorQuadruple, psi1, psi2, tol: Tolerances = DEFAULT) -> np.ndarray:
    return x_from_m(m_vector(quad, psi1, psi2, tol))


@dataclass(frozen=True, eq=False)
class FieldSample:
    point: np.ndarray
    x: np.ndarray
    f_over_2i: float
    gap: float
    m: np.ndarray
    third_column: np.ndarray
    rho: float | None = None
    v_hat: np.ndarray | None = None


def _band_data(quad, u, j, tol):
    h = assemble(quad, u)
    w, vec = np.linalg.eigh(h)
    if j < 0 or j + 1 >= w.shape[0]:
        raise IndexError(f"band ({j}, {j + 1}) out of range")
    g = float(w[j + 1] - w[j])
    scale = quad.scale()
    if g <= tol.degeneracy * scale:
        raise AtIntersectionError(f"levels {j},{j + 1} are degenerate at {np.asarray(u)}")
    if band_separation(w, j, j + 1) <= tol.separation * scale:
        raise SeparationError(f"band ({j},{j + 1}) touches another level at {np.asarray(u)}")
    p1 = vec[:, j]
    p2 = vec[:, j + 1]
    hp1 = quad.controls @ p1
    hp2 = quad.controls @ p2
    off = hp2 @ p1.conj()
    c3 = np.real(hp2 @ p2.conj()) - np.real(hp1 @ p1.conj())
    return off, c3, g


def nonmixing_field_at(quad: OperatorQuadruple, u, j: int = 0, ref=None, tol: Tolerances = DEFAULT) -> FieldSample:
    """Field, gap rate and gap at ``u`` for the band (j, j+1).

    ``ref`` is an optional known intersection; when given, the sample also
    carries the distance ``rho`` to it and the radial unit vector.
    """
    u = np.array(u, dtype=float)
    m, c3, g = _band_data(quad, u, j, tol)
    x = x_from_m(m)
    # F/(2i) = -det M~ with M~ = [Re m, Im m, c3]
    f = -float(np.linalg.det(np.column_stack([m.real, m.imag, c3])))
    rho = vh = None
    if ref is not None:
        d = u - np.asarray(ref, dtype=float)
        rho = float(np.linalg.norm(d))
        vh = d / rho if rho > 0 else None
    return FieldSample(u, x, f, g, m, c3, rho, vh)


@dataclass(frozen=True, eq=False)
class IntegralCurve:
    """Samples of an integral curve, ordered along the direction of motion.

    ``times`` is the flow time of the unnormalised field (it decreases when
    the curve is followed against X); ``arclength`` is cumulative length.
    """

    samples: tuple
    times: np.ndarray
    arclength: np.ndarray
    terminal: np.ndarray
    terminal_gap: float
    reached_intersection: bool
    iterations: int = 0
    diagnostics: dict = field(default_factory=dict)

    @property
    def points(self) -> np.ndarray:
        return np.array([s.point for s in self.samples])

    @property
    def gaps(self) -> np.ndarray:
        return np.array([s.gap for s in self.samples])

    @property
    def rates(self) -> np.ndarray:
        return np.array([s.f_over_2i for s in self.samples])

    @property
    def length(self) -> float:
        return float(self.arclength[-1])


def _direction(quad, u, j, sign, tol):
    """Unit tangent and d(time)/d(arclength) for the oriented field."""
    s = nonmixing_field_at(quad, u, j, tol=tol)
    nx = float(np.linalg.norm(s.x))
    if nx < tol.field_min * quad.scale() ** 2:
        raise FieldDegenerateError(f"non-mixing field vanishes at {u} (|X| = {nx:.2e})")
    # sign=-1 seeks the intersection: the gap must decrease
    orient = sign * (1.0 if s.f_over_2i > 0 else -1.0)
    return orient * s.x / nx, orient / nx, s


def _rk4(quad, u, tau, h, j, sign, tol):
    k1, t1, s = _direction(quad, u, j, sign, tol)
    k2, t2, _ = _direction(quad, u + 0.5 * h * k1, j, sign, tol)
    k3, t3, _ = _direction(quad, u + 0.5 * h * k2, j, sign, tol)
    k4, t4, _ = _direction(quad, u + h * k3, j, sign, tol)
    du = h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    dt = h / 6.0 * (t1 + 2 * t2 + 2 * t3 + t4)
    return u + du, tau + dt, s


def polish_intersection(quad: OperatorQuadruple, u, j: int = 0, h: float = 1e-5):
    """One Newton step on u -> gap(u)^2 with finite-difference derivatives.

    gap^2 is smooth through a cone tip, so Newton converges there.  The step
    is kept only if it lowers the gap.
    """
    u = np.asarray(u, dtype=float)
    e = np.eye(3) * h
    offsets = [np.zeros(3)]
    for a in range(3):
        offsets += [e[a], -e[a]]
    for a in range(3):
        for b in range(a + 1, 3):
            offsets += [e[a] + e[b], e[a] - e[b], -e[a] + e[b], -e[a] - e[b]]
    pts = u + np.array(offsets)
    w = np.linalg.eigvalsh(assemble(quad, pts))
    g2 = (w[:, j + 1] - w[:, j]) ** 2
    f0 = g2[0]
    grad = np.array([(g2[1 + 2 * a] - g2[2 + 2 * a]) / (2 * h) for a in range(3)])
    hess = np.zeros((3, 3))
    for a in range(3):
        hess[a, a] = (g2[1 + 2 * a] - 2 * f0 + g2[2 + 2 * a]) / h**2
    k = 7
    for a in range(3):
        for b in range(a + 1, 3):
            pp, pm, mp, mm = g2[k : k + 4]
            hess[a, b] = hess[b, a] = (pp - pm - mp + mm) / (4 * h**2)
            k += 4
    try:
        new = u - np.linalg.solve(hess, grad)
    except np.linalg.LinAlgError:
        return u, float(np.sqrt(f0))
    g_new = float(np.diff(np.linalg.eigvalsh(assemble(quad, new[None]))[0, j : j + 2])[0])
    if g_new < np.sqrt(f0):
        return new, g_new
    return u, float(np.sqrt(f0))


def _integrate(quad, u0, j, sign, step, length, gap_tol, tol, ref=None, stop_gap=True, max_steps=10**6):
    """RK4 in arclength; returns samples, times, arclengths and a status flag."""
    u = np.array(u0, dtype=float)
    tau = 0.0
    s_len = 0.0
    samples, times, arcs = [], [], []
    reached = False
    it = 0
    h_min = 1e-14 * max(1.0, float(np.linalg.norm(u)))
    while it < max_steps:
        k1, _, smp = _direction(quad, u, j, sign, tol)
        if ref is not None:
            smp = nonmixing_field_at(quad, u, j, ref=ref, tol=tol)
        samples.append(smp)
        times.append(tau)
        arcs.append(s_len)
        if stop_gap and smp.gap < gap_tol:
            reached = True
            break
        if s_len >= length - 1e-15:
            break
        h = min(step, length - s_len)
        if stop_gap:
            rate = abs(smp.f_over_2i) / float(np.linalg.norm(smp.x))
            # keep the step short compared with the remaining distance to the tip
            h = min(h, 0.5 * smp.gap / max(rate, 1e-300))
        if h < h_min:
            break
        try:
            u_new, tau_new, _ = _rk4(quad, u, tau, h, j, sign, tol)
        except AtIntersectionError:
            # an RK stage landed on the tip: treat as arrival
            reached = True
            break
        it += 1
        u, tau, s_len = u_new, tau_new, s_len + h
    return samples, np.array(times), np.array(arcs), reached, it


def flow_to_intersection(
    quad: OperatorQuadruple,
    u0,
    j: int = 0,
    step: float = 1e-3,
    gap_tol: float | None = None,
    max_time: float = 50.0,
    polish: bool = True,
    ref=None,
    tol: Tolerances = DEFAULT,
) -> IntegralCurve:
    """Follow the gap-decreasing non-mixing flow from ``u0`` until the gap collapses.

    ``max_time`` bounds the arclength travelled.  If it is exhausted the
    curve is returned with ``reached_intersection = False``.
    """
    gap_tol = tol.gap_tol if gap_tol is None else gap_tol
    s0 = nonmixing_field_at(quad, u0, j, tol=tol)
    if s0.gap < gap_tol:
        raise AtIntersectionError(f"starting gap {s0.gap:.2e} is already below gap_tol")
    samples, times, arcs, reached, it = _integrate(quad, u0, j, -1, step, max_time, gap_tol, tol, ref)
    terminal = samples[-1].point
    tgap = samples[-1].gap
    diag = {"raw_terminal_gap": tgap}
    if reached and polish:
        terminal, tgap = polish_intersection(quad, terminal, j)
    if not reached:
        log.info("flow from %s stopped after length %.3g with gap %.3e", u0, arcs[-1], tgap)
    return IntegralCurve(tuple(samples), times, arcs, np.asarray(terminal), float(tgap), reached, it, diag)


def flow_away(
    quad: OperatorQuadruple, u0, j: int, length: float, step: float = 1e-3, tol: Tolerances = DEFAULT
) -> IntegralCurve:
    """Follow the gap-increasing orientation of the field for a given arclength."""
    samples, times, arcs, _, it = _integrate(quad, u0, j, +1, step, length, 0.0, tol, stop_gap=False)
    return IntegralCurve(tuple(samples), times, arcs, samples[-1].point, samples[-1].gap, False, it)


def arrival_direction(curve: IntegralCurve) -> np.ndarray:
    """Unit direction of motion at the last sample, from the oriented field."""
    s = curve.samples[-1]
    orient = -1.0 if s.f_over_2i > 0 else 1.0
    d = orient * s.x
    return d / np.linalg.norm(d)


def curve_with_limit_direction(
    quad: OperatorQuadruple,
    u_bar,
    j: int,
    v,
    eta: float,
    seed_radius: float | None = None,
    step: float | None = None,
    max_iter: int = 60,
    tol: Tolerances = DEFAULT,
) -> IntegralCurve:
    """Integral curve of length ``eta`` that enters ``u_bar`` with unit tangent ``v``.

    Shooting: a seed at distance ``seed_radius`` from ``u_bar`` is flowed into
    the intersection and its seed direction is corrected by the arrival
    error until the arrival tangent matches ``v``.  The curve is then
    continued backwards (gap increasing) to the requested length.  The last
    point of the returned curve is ``u_bar`` itself.
    """
    u_bar = np.asarray(u_bar, dtype=float)
    v = np.asarray(v, dtype=float)
    v = v / np.linalg.norm(v)
    r0 = min(0.02, 0.5 * eta) if seed_radius is None else seed_radius
    ds = r0 / 100.0 if step is None else step
    d = -v.copy()
    best = (np.inf, None, None)
    damping = 1.0
    for it in range(max_iter):
        try:
            c = flow_to_intersection(quad, u_bar + r0 * d, j, step=ds, max_time=20 * r0, polish=False, tol=tol)
        except (FieldDegenerateError, AtIntersectionError, SeparationError) as exc:
            raise ConstructionError(f"shooting toward direction {v} failed: {exc}") from exc
        if not c.reached_intersection or np.linalg.norm(c.terminal - u_bar) > 10 * r0 * tol.tangent:
            raise ConstructionError(f"seed {u_bar + r0 * d} does not flow into the intersection")
        err = arrival_direction(c) - v
        e = float(np.linalg.norm(err))
        if e < best[0]:
            best = (e, d.copy(), c)
        elif damping > 0.1:
            damping *= 0.5
            d = best[1].copy()
            err = np.zeros(3)
        if e < 1e-2 * tol.tangent:
            break
        d = d + damping * err
        d /= np.linalg.norm(d)
    e, d, c = best
    if e > tol.tangent:
        raise ConstructionError(f"shooting residual {e:.2e} above {tol.tangent} for direction {v}")
    if c.length < eta:
        ext = flow_away(quad, c.samples[0].point, j, eta - c.length, step=max(ds, min(1e-3, eta / 200)), tol=tol)
        # ext runs away from the tip; reverse it so motion is toward u_bar
        back = list(reversed(ext.samples))[:-1]
        # both integrations carry the same field time, zero at the seed
        times = np.concatenate([ext.times[::-1][:-1], c.times])
        a_back = (ext.arclength[-1] - ext.arclength[::-1])[:-1]
        samples = back + list(c.samples)
        arcs = np.concatenate([a_back, c.arclength + ext.arclength[-1]])
    else:
        keep = np.searchsorted(c.arclength, c.length - eta)
        samples = list(c.samples[keep:])
        times = c.times[keep:] - c.times[keep]
        arcs = c.arclength[keep:] - c.arclength[keep]
    diag = {"shooting_residual": e, "seed_direction": d.tolist(), "seed_radius": r0}
    return IntegralCurve(tuple(samples), np.asarray(times), np.asarray(arcs), u_bar.copy(), 0.0, True, c.iterations, diag)


def verify_gap_rate(curve: IntegralCurve) -> float:
    """Max |d(gap)/dt - F/(2i)| over interior samples (nonuniform central differences)."""
    if len(curve.samples) < 3:
        raise InsufficientDataError("need at least 3 samples")
    t = np.asarray(curve.times, dtype=float)
    g = curve.gaps
    r = curve.rates
    h1 = t[1:-1] - t[:-2]
    h2 = t[2:] - t[1:-1]
    ok = (np.abs(h1) > 0) & (np.abs(h2) > 0)
    deriv = (h1**2 * g[2:] - h2**2 * g[:-2] + (h2**2 - h1**2) * g[1:-1]) / (h1 * h2 * (h1 + h2))
    res = np.abs(deriv - r[1:-1])[ok]
    if res.size == 0:
        raise InsufficientDataError("no interior samples with distinct times")
    return float(np.max(res))


def field_on_grid(quad: OperatorQuadruple, points, j: int = 0) -> np.ndarray:
    """Vectorised X at many points (no degeneracy checks)."""
    _, v = eig_batch(quad, np.asarray(points, dtype=float))
    p1 = v[..., :, j]
    p2 = v[..., :, j + 1]
    m = np.einsum("...i,kij,...j->...k", p1.conj(), quad.controls, p2)
    return x_from_m(m)


def gap_rate_on_grid(quad: OperatorQuadruple, points, j: int = 0):
    """Gap of the band (j, j+1) and F/(2i) at many points, vectorised.

    No degeneracy checks: at an exact crossing the eigenvector choice is
    arbitrary and F/(2i) is meaningless, which callers must mask by the gap.
    """
    w, v = eig_batch(quad, np.asarray(points, dtype=float))
    p1 = v[..., :, j]
    p2 = v[..., :, j + 1]
    m = np.einsum("...i,kij,...j->...k", p1.conj(), quad.controls, p2)
    d1 = np.einsum("...i,kij,...j->...k", p1.conj(), quad.controls, p1).real
    d2 = np.einsum("...i,kij,...j->...k", p2.conj(), quad.controls, p2).real
    mt = np.stack([m.real, m.imag, d2 - d1], axis=-1)
    return w[..., j + 1] - w[..., j], -np.linalg.det(mt)
