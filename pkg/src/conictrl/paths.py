"""Control paths through conical intersections.

A path is a chain of arcs (straight segments, cubic Hermite joins and
tabulated non-mixing arcs), each parameterised uniformly in arclength, so
that the global parameter tau in [0, 1] is proportional to arclength.
Marks record where the path crosses an intersection and the transfer that
was planned there.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import minimize_scalar

from .config import DEFAULT, Tolerances
from .conicity import RealConicityMatrix, is_conical
from .errors import (
    ConstructionError,
    InvalidInputError,
    InvalidPathError,
    InvalidTargetError,
    SynthesisError,
)
from .hermitian import OperatorQuadruple, assemble
from .nonmixing import curve_with_limit_direction, nonmixing_field_at
from .transport import TransferAngles, inbound_conicity, limit_basis, xi_beta

log = logging.getLogger(__name__)

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


def _unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def _hermite(p0, m0, p1, m1, s):
    s = np.asarray(s, dtype=float)[..., None]
    s2, s3 = s * s, s * s * s
    return (2 * s3 - 3 * s2 + 1) * p0 + (s3 - 2 * s2 + s) * m0 + (-2 * s3 + 3 * s2) * p1 + (s3 - s2) * m1


def _hermite_d(p0, m0, p1, m1, s):
    s = np.asarray(s, dtype=float)[..., None]
    s2 = s * s
    return (6 * s2 - 6 * s) * p0 + (3 * s2 - 4 * s + 1) * m0 + (-6 * s2 + 6 * s) * p1 + (3 * s2 - 2 * s) * m1


def _quad_length(deriv, a=0.0, b=1.0, pieces=64):
    edges = np.linspace(a, b, pieces + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])[:, None]
    half = 0.5 * (edges[1:] - edges[:-1])[:, None]
    s = mid + half * _GL_NODES[None, :]
    speed = np.linalg.norm(deriv(s.ravel()), axis=-1).reshape(s.shape)
    return np.sum(speed * half * _GL_WEIGHTS[None, :], axis=1)


# --- arcs --------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Segment:
    a: np.ndarray
    b: np.ndarray
    kind = "segment"

    def __post_init__(self):
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float))

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.b - self.a))

    def point(self, s):
        s = np.asarray(s, dtype=float)[..., None]
        return self.a + s * (self.b - self.a)

    def deriv(self, s):
        s = np.asarray(s, dtype=float)
        return np.broadcast_to(self.b - self.a, s.shape + (3,)).copy()

    def to_dict(self):
        return {"kind": self.kind, "a": self.a.tolist(), "b": self.b.tolist()}


@dataclass(frozen=True, eq=False)
class SmoothJoin:
    """Cubic Hermite from ``a`` (unit tangent ``ta``) to ``b`` (unit tangent ``tb``).

    The raw cubic is reparameterised by arclength through a spline of the
    inverse length function.
    """

    a: np.ndarray
    ta: np.ndarray
    b: np.ndarray
    tb: np.ndarray
    kind = "join"

    def __post_init__(self):
        for name in ("a", "ta", "b", "tb"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        chord = float(np.linalg.norm(self.b - self.a))
        if chord == 0:
            raise InvalidPathError("join endpoints coincide")
        m0, m1 = chord * _unit(self.ta), chord * _unit(self.tb)
        object.__setattr__(self, "_m", (m0, m1))
        knots = 256
        pieces = _quad_length(self._raw_d, pieces=knots)
        cum = np.concatenate([[0.0], np.cumsum(pieces)])
        raw = np.linspace(0.0, 1.0, knots + 1)
        speed = np.linalg.norm(self._raw_d(raw), axis=-1)
        if np.min(speed) < 1e-3 * chord:
            raise ConstructionError("join has a near-cusp; tangents are incompatible")
        total = float(cum[-1])
        # inverse map with the exact end slopes d(raw)/d(sigma) = total / speed
        inv = CubicSpline(cum / total, raw, bc_type=((1, total / speed[0]), (1, total / speed[-1])))
        object.__setattr__(self, "_length", total)
        object.__setattr__(self, "_inv", inv)

    def _raw(self, r):
        m0, m1 = self._m
        return _hermite(self.a, m0, self.b, m1, r)

    def _raw_d(self, r):
        m0, m1 = self._m
        return _hermite_d(self.a, m0, self.b, m1, r)

    @property
    def length(self) -> float:
        return self._length

    def point(self, s):
        return self._raw(self._inv(np.clip(s, 0.0, 1.0)))

    def deriv(self, s):
        s = np.clip(np.asarray(s, dtype=float), 0.0, 1.0)
        return self._raw_d(self._inv(s)) * self._inv(s, 1)[..., None]

    def to_dict(self):
        return {"kind": self.kind, "a": self.a.tolist(), "ta": self.ta.tolist(), "b": self.b.tolist(), "tb": self.tb.tolist()}


@dataclass(frozen=True, eq=False)
class NonMixingArc:
    """Tabulated integral curve: arclength ``s``, points and unit tangents.

    Interpolated by piecewise cubic Hermite in arclength.
    """

    s: np.ndarray
    points: np.ndarray
    tangents: np.ndarray
    kind = "nonmixing"

    def __post_init__(self):
        s = np.asarray(self.s, dtype=float)
        p = np.asarray(self.points, dtype=float)
        t = np.asarray(self.tangents, dtype=float)
        if not (len(s) == len(p) == len(t)) or len(s) < 2:
            raise InvalidPathError("non-mixing arc tables must have equal length >= 2")
        keep = np.concatenate([[True], np.diff(s) > 1e-14])
        s, p, t = s[keep] - s[0], p[keep], t[keep] / np.linalg.norm(t[keep], axis=1)[:, None]
        for name, val in (("s", s), ("points", p), ("tangents", t)):
            object.__setattr__(self, name, val)

    @property
    def length(self) -> float:
        return float(self.s[-1])

    def _locate(self, sigma):
        x = np.clip(np.asarray(sigma, dtype=float), 0.0, 1.0) * self.s[-1]
        k = np.clip(np.searchsorted(self.s, x, side="right") - 1, 0, len(self.s) - 2)
        h = self.s[k + 1] - self.s[k]
        r = (x - self.s[k]) / h
        return k, h, r

    def point(self, sigma):
        k, h, r = self._locate(sigma)
        hh = h[..., None]
        return _hermite(self.points[k], hh * self.tangents[k], self.points[k + 1], hh * self.tangents[k + 1], r)

    def deriv(self, sigma):
        k, h, r = self._locate(sigma)
        hh = h[..., None]
        d = _hermite_d(self.points[k], hh * self.tangents[k], self.points[k + 1], hh * self.tangents[k + 1], r)
        return d / hh * self.s[-1]

    def reversed(self) -> "NonMixingArc":
        s = self.s[-1] - self.s[::-1]
        return NonMixingArc(s, self.points[::-1], -self.tangents[::-1])

    def to_dict(self):
        return {"kind": self.kind, "s": self.s.tolist(), "points": self.points.tolist(), "tangents": self.tangents.tolist()}


def arc_from_dict(d):
    kind = d["kind"]
    if kind == "segment":
        return Segment(d["a"], d["b"])
    if kind == "join":
        return SmoothJoin(d["a"], d["ta"], d["b"], d["tb"])
    if kind == "nonmixing":
        return NonMixingArc(d["s"], d["points"], d["tangents"])
    raise InvalidPathError(f"unknown arc kind {kind!r}")


# --- marks and paths ----------------------------------------------------------


@dataclass(frozen=True)
class Mark:
    tau: float
    level: int
    point: tuple
    inbound: tuple  # unit direction of motion on arrival
    outbound: tuple  # unit direction of motion on departure
    angles: TransferAngles
    pi1: float

    def to_dict(self):
        a = self.angles
        return {
            "tau": self.tau,
            "level": self.level,
            "point": list(self.point),
            "inbound": list(self.inbound),
            "outbound": list(self.outbound),
            "pi1": self.pi1,
            "xi": a.xi,
            "beta": a.beta,
            "beta_defined": a.beta_defined,
        }

    @classmethod
    def from_dict(cls, d):
        ang = TransferAngles(d["xi"], d["beta"], d["beta_defined"], tuple(d["outbound"]))
        return cls(d["tau"], d["level"], tuple(d["point"]), tuple(d["inbound"]), tuple(d["outbound"]), ang, d["pi1"])


@dataclass(frozen=True, eq=False)
class ControlPath:
    """gamma: [0, 1] -> R^3 made of arcs; ``breaks`` are the arc boundaries in tau."""

    arcs: tuple
    breaks: np.ndarray
    marks: tuple = ()
    mode: str = "corner"
    radius: float = 0.0

    def __post_init__(self):
        b = np.asarray(self.breaks, dtype=float)
        if len(b) != len(self.arcs) + 1 or b[0] != 0.0 or abs(b[-1] - 1.0) > 1e-12 or np.any(np.diff(b) <= 0):
            raise InvalidPathError("breaks must increase from 0 to 1, one more than the arcs")
        b[-1] = 1.0
        object.__setattr__(self, "breaks", b)
        object.__setattr__(self, "arcs", tuple(self.arcs))
        object.__setattr__(self, "marks", tuple(self.marks))

    @property
    def total_length(self) -> float:
        return float(sum(a.length for a in self.arcs))

    @property
    def start(self) -> np.ndarray:
        return self.arcs[0].point(0.0)

    @property
    def end(self) -> np.ndarray:
        return self.arcs[-1].point(1.0)

    def _split(self, tau):
        tau = np.asarray(tau, dtype=float)
        if np.any(tau < -1e-12) or np.any(tau > 1 + 1e-12):
            raise InvalidInputError("path parameter outside [0, 1]")
        idx = np.clip(np.searchsorted(self.breaks, tau, side="right") - 1, 0, len(self.arcs) - 1)
        width = self.breaks[idx + 1] - self.breaks[idx]
        s = np.clip((tau - self.breaks[idx]) / width, 0.0, 1.0)
        return tau, idx, s, width

    def __call__(self, tau):
        tau, idx, s, _ = self._split(tau)
        out = np.empty(tau.shape + (3,))
        for k in np.unique(idx):
            sel = idx == k
            out[sel] = self.arcs[k].point(s[sel])
        return out

    def velocity(self, tau):
        tau, idx, s, width = self._split(tau)
        out = np.empty(tau.shape + (3,))
        for k in np.unique(idx):
            sel = idx == k
            out[sel] = self.arcs[k].deriv(s[sel]) / width[sel][..., None]
        return out

    def to_dict(self):
        return {
            "arcs": [a.to_dict() for a in self.arcs],
            "breaks": self.breaks.tolist(),
            "marks": [m.to_dict() for m in self.marks],
            "mode": self.mode,
            "radius": self.radius,
        }

    @classmethod
    def from_dict(cls, d):
        arcs = [arc_from_dict(a) for a in d["arcs"]]
        marks = [Mark.from_dict(m) for m in d.get("marks", [])]
        return cls(tuple(arcs), np.array(d["breaks"]), tuple(marks), d.get("mode", "corner"), d.get("radius", 0.0))


def save_path(path: ControlPath, filename) -> None:
    Path(filename).write_text(json.dumps(path.to_dict(), sort_keys=True) + "\n")


def load_path(filename) -> ControlPath:
    try:
        return ControlPath.from_dict(json.loads(Path(filename).read_text()))
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise InvalidPathError(f"malformed path file {filename}: {exc}") from exc


def straight_path(a, b) -> ControlPath:
    return ControlPath((Segment(a, b),), np.array([0.0, 1.0]))


def constant_path(u) -> ControlPath:
    """A path that sits at ``u`` (zero length; for stationary runs)."""

    class _Fixed:
        kind = "fixed"
        length = 0.0

        def __init__(self, p):
            self.p = np.asarray(p, dtype=float)

        def point(self, s):
            return np.broadcast_to(self.p, np.shape(s) + (3,)).copy()

        def deriv(self, s):
            return np.zeros(np.shape(s) + (3,))

        def to_dict(self):
            return {"kind": "segment", "a": self.p.tolist(), "b": self.p.tolist()}

    return ControlPath((_Fixed(u),), np.array([0.0, 1.0]))


def reparameterize_arclength(path: ControlPath) -> ControlPath:
    """Re-space the breaks in proportion to the measured arc lengths."""
    lengths = np.array([float(np.sum(_quad_length(a.deriv, pieces=32))) for a in path.arcs])
    total = float(np.sum(lengths))
    if total <= 0:
        raise InvalidPathError("zero-length path")
    breaks = np.concatenate([[0.0], np.cumsum(lengths) / total])
    breaks[-1] = 1.0
    old = path.breaks
    marks = []
    for m in path.marks:
        k = int(np.argmin(np.abs(old - m.tau)))
        marks.append(Mark(float(breaks[k]), m.level, m.point, m.inbound, m.outbound, m.angles, m.pi1))
    return ControlPath(path.arcs, breaks, tuple(marks), path.mode, path.radius)


# --- outward directions --------------------------------------------------------


@dataclass(frozen=True, eq=False)
class OutwardLocus:
    """Outbound directions v(theta) with |cos Xi(v)| = pi1.

    With y = M~^T v, the admissible directions satisfy
    sqrt(y1^2 + y2^2) = C y3, C = pi1 pi2 / (pi1^2 - pi2^2), C y3 >= 0.
    """

    c_value: float
    mt_inv_t: np.ndarray
    pi1: float
    pi2: float
    special: str | None = None
    exact: np.ndarray | None = None

    @property
    def c_infinite(self) -> bool:
        return not np.isfinite(self.c_value)

    def cone_coordinates(self, theta):
        r = self.pi1 * self.pi2
        return np.array([r * np.cos(theta), r * np.sin(theta), self.pi1**2 - self.pi2**2])

    def direction(self, theta: float = 0.0) -> np.ndarray:
        if self.exact is not None:
            return self.exact.copy()
        return _unit(self.mt_inv_t @ self.cone_coordinates(theta))


def outward_locus(mt: RealConicityMatrix, pi1: float, pi2: float, inbound_direction=None, atol: float = 1e-12) -> OutwardLocus:
    """Locus of outbound directions keeping amplitude ``pi1`` on the lower level.

    ``mt`` must be built on the inbound limit basis.  When ``inbound_direction``
    (the ray d0 of that basis) is given, the two special targets return it
    exactly: pi1 = 1 gives d0 and pi1 = 0 gives -d0.
    """
    if pi1 < -atol or pi2 < -atol or abs(pi1**2 + pi2**2 - 1.0) > 1e-9:
        raise InvalidTargetError(f"(pi1, pi2) = ({pi1}, {pi2}) is not a unit pair of non-negative weights")
    diff = pi1**2 - pi2**2
    c = np.inf if abs(diff) < atol else pi1 * pi2 / diff
    inv_t = np.linalg.inv(mt.mt).T
    special = exact = None
    if abs(pi1 - 1.0) < atol:
        special = "-w0"
        exact = None if inbound_direction is None else _unit(inbound_direction)
    elif abs(pi1) < atol:
        special = "w0"
        exact = None if inbound_direction is None else -_unit(inbound_direction)
    return OutwardLocus(float(c), inv_t, float(pi1), float(pi2), special, exact)


def split_weights(p) -> list:
    """Per-mark amplitudes pi1_j = p_j / sqrt(sum_{l >= j} p_l^2)."""
    p = np.asarray(p, dtype=float)
    out = []
    for j in range(len(p) - 1):
        tail = float(np.sqrt(np.sum(p[j:] ** 2)))
        out.append(1.0 if tail == 0 else float(p[j] / tail))
    return out


def compose_weights(pi1s) -> np.ndarray:
    """Inverse of :func:`split_weights`: final amplitudes from per-mark splits."""
    out = []
    carry = 1.0
    for a in pi1s:
        out.append(carry * a)
        carry *= np.sqrt(max(0.0, 1.0 - a * a))
    out.append(carry)
    return np.array(out)


def check_target(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size < 1 or np.any(p < 0) or np.any(p > 1):
        raise InvalidTargetError("target weights must lie in [0, 1]")
    if abs(float(np.sum(p**2)) - 1.0) > 1e-12:
        raise InvalidTargetError(f"sum of squared weights is {np.sum(p ** 2):.15f}, expected 1")
    return p


# --- validation -----------------------------------------------------------------


@dataclass(frozen=True)
class ArcReport:
    index: int
    kind: str
    min_gaps: tuple
    worst_tau: float
    passed: bool


@dataclass(frozen=True)
class PathReport:
    arcs: tuple
    tangency: tuple
    passed: bool
    worst: dict = field(default_factory=dict)


def _gaps_at(quad, pts):
    w = np.linalg.eigvalsh(assemble(quad, pts))
    return np.diff(w, axis=-1)


def _arc_check(quad, path, k, floor, n, pairs):
    """Sample arc k; return min gaps per pair, worst tau and pass flag."""
    a, b = path.breaks[k], path.breaks[k + 1]
    taus = np.linspace(a, b, n)
    pts = path(taus)
    gaps = _gaps_at(quad, pts)[:, : pairs]
    need = np.full_like(gaps, floor)
    r = max(path.radius, 1e-12)
    for m in path.marks:
        if a - 1e-12 <= m.tau <= b + 1e-12:
            # the crossing pair may close linearly into the mark
            dist = np.linalg.norm(pts - np.asarray(m.point), axis=1)
            need[:, m.level] = np.minimum(need[:, m.level], floor * np.minimum(1.0, dist / r))
            near = dist < 1e-9
            need[near, m.level] = -np.inf
    # samples can straddle a point degeneracy; refine each pair's minimum
    for jj in range(gaps.shape[1]):
        i = int(np.argmin(gaps[:, jj]))
        lo, hi = taus[max(i - 1, 0)], taus[min(i + 1, n - 1)]
        if hi <= lo:
            continue
        res = minimize_scalar(lambda t: _gaps_at(quad, path(np.array([t])))[0, jj], bounds=(lo, hi), method="bounded", options={"xatol": 1e-10})
        if res.fun < gaps[i, jj]:
            taus[i], pts[i], gaps[i, jj] = res.x, path(np.array([res.x]))[0], res.fun
            need[i, jj] = floor
            for m in path.marks:
                if m.level == jj and a - 1e-12 <= m.tau <= b + 1e-12:
                    d = np.linalg.norm(pts[i] - np.asarray(m.point))
                    need[i, jj] = -np.inf if d < 1e-9 else min(need[i, jj], floor * min(1.0, d / r))
    margin = gaps - need
    i, jj = np.unravel_index(np.argmin(margin), margin.shape)
    passed = bool(margin[i, jj] > 0)
    return tuple(float(x) for x in gaps.min(axis=0)), float(taus[i]), passed, int(jj)


def validate_path(quad: OperatorQuadruple, path: ControlPath, floor: float = 1e-3, samples: int = 256, levels: int | None = None) -> PathReport:
    """Gap report per arc and tangency residuals at marks.

    ``levels`` limits the check to the pairs (0,1), ..., (levels-2, levels-1);
    by default all adjacent pairs are checked.
    """
    pairs = quad.dim - 1 if levels is None else max(1, levels - 1)
    reports = []
    worst = {}
    for k, arc in enumerate(path.arcs):
        mins, wt, ok, pair = _arc_check(quad, path, k, floor, samples, pairs)
        reports.append(ArcReport(k, arc.kind, mins, wt, ok))
        if not ok and not worst:
            u = path(np.array([wt]))[0]
            worst = {"arc": k, "tau": wt, "point": u.tolist(), "pair": pair, "gap": float(_gaps_at(quad, u[None])[0, pair])}
    tang = []
    for m in path.marks:
        h = 1e-7
        vin = _unit(path.velocity(np.array([max(m.tau - h, 0.0)]))[0])
        vout = _unit(path.velocity(np.array([min(m.tau + h, 1.0)]))[0])
        tang.append((float(np.linalg.norm(vin - np.asarray(m.inbound))), float(np.linalg.norm(vout - np.asarray(m.outbound)))))
    passed = all(r.passed for r in reports)
    return PathReport(tuple(reports), tuple(tang), passed, worst)


# --- synthesis ---------------------------------------------------------------------


@dataclass(frozen=True)
class Intersection:
    point: tuple
    level: int


@dataclass(frozen=True)
class SynthesisOptions:
    """Free choices of the construction.

    ``radius``: half-length of the straight or non-mixing pieces at each
    mark (default 0.1 times the distance to the nearest other mark or
    endpoint).  ``theta``: fixed angle on the outward cone, otherwise the
    angle maximising the smallest gap along a probe of length ``radius``
    followed by a trial join to the next waypoint.
    ``start_tangent`` / ``end_tangent``: "chord", "field" (along the
    non-mixing field of the first/last band) or an explicit vector.
    ``lead``: length, in units of the radius, of straight lead-in and
    lead-out segments continuing the pieces at each mark, so that joins turn
    further from the degeneracy.
    """

    radius: float | None = None
    theta: float | None = None
    n_theta: int = 24
    floor: float = 1e-3
    samples: int = 256
    max_reroutes: int = 16
    seed: int = 0
    start_tangent: object = "chord"
    end_tangent: object = "chord"
    inbound: tuple | None = None
    arc_step: float | None = None
    lead: float = 0.0


def _endpoint_tangent(quad, u, j, spec, toward, tol):
    toward = _unit(toward)
    if isinstance(spec, str):
        if spec == "chord":
            return toward
        if spec == "field":
            x = nonmixing_field_at(quad, u, j, tol=tol).x
            x = _unit(x)
            return x if np.dot(x, toward) >= 0 else -x
        raise InvalidInputError(f"unknown tangent rule {spec!r}")
    return _unit(spec)


def _make_join(a, ta, b, tb):
    chord = np.asarray(b, float) - np.asarray(a, float)
    c = _unit(chord)
    if np.linalg.norm(_unit(ta) - c) < 1e-12 and np.linalg.norm(_unit(tb) - c) < 1e-12:
        return Segment(a, b)
    return SmoothJoin(a, ta, b, tb)


def _arc_ok(quad, arc, floor, samples, pairs):
    s = np.linspace(0.0, 1.0, samples)
    g = _gaps_at(quad, arc.point(s))[:, :pairs]
    return bool(np.min(g) > floor)


def _join_candidates(a, ta, b, tb, opts, rng):
    a, b = np.asarray(a, float), np.asarray(b, float)
    try:
        yield [_make_join(a, ta, b, tb)]
    except ConstructionError:
        pass
    chord = np.linalg.norm(b - a)
    tv = _unit(b - a)
    for _ in range(opts.max_reroutes):
        via = 0.5 * (a + b) + 0.5 * chord * rng.normal(size=3) / np.sqrt(3)
        try:
            yield [_make_join(a, ta, via, tv), _make_join(via, tv, b, tb)]
        except ConstructionError:
            continue


def _validated_join(quad, a, ta, b, tb, opts, rng, pairs):
    """Gap-validated join from (a, ta) to (b, tb).

    The direct Hermite join and ``opts.max_reroutes`` detours through random
    via points are compared; among those clearing the gap floor the one with
    the smallest peak nonadiabatic coupling is kept, a detour only if it at
    least halves the coupling of the direct join.
    """
    s = np.linspace(0.0, 1.0, opts.samples)
    best, best_score = None, np.inf
    for k, cand in enumerate(_join_candidates(a, ta, b, tb, opts, rng)):
        if not all(_arc_ok(quad, c, opts.floor, opts.samples, pairs) for c in cand):
            continue
        score = max(_coupling_at(quad, c.point(s), _unit_rows(c.deriv(s)), pairs) for c in cand)
        if len(cand) > 1:
            # a detour has to earn its extra length
            score *= 2.0
        if score < best_score:
            best, best_score = cand, score
    if best is None:
        raise SynthesisError(f"no gap-validated join from {np.asarray(a)} to {np.asarray(b)}", segment=(list(a), list(b)))
    if len(best) > 1:
        log.info("join rerouted through %s", best[0].b)
    return best


def _unit_rows(d):
    d = np.atleast_2d(d)
    return d / np.maximum(np.linalg.norm(d, axis=-1, keepdims=True), 1e-300)


def _coupling_at(quad, pts, vel, pairs):
    """Largest |<phi_k, H' phi_{k+1}>| / gap_k^2 over the samples."""
    w, vecs = np.linalg.eigh(assemble(quad, pts))
    dh = assemble(quad, vel) - quad.h0[None]
    hv = np.swapaxes(vecs.conj(), -1, -2) @ dh @ vecs
    k = np.arange(pairs)
    off = np.abs(hv[:, k, k + 1])
    gaps = w[:, k + 1] - w[:, k]
    return float(np.max(off / np.maximum(gaps**2, 1e-300)))


def _probe_theta(quad, ubar, locus, radius, n_theta, pairs, toward=None):
    """Angle on the outward cone that keeps the evolution most adiabatic.

    Without ``toward`` the score is the smallest gap along the first
    ``radius`` of the outbound ray.  With it, the score is the largest
    nonadiabatic coupling along a trial join from the end of that ray to
    ``toward``, which penalises sharp turns close to a degeneracy.
    """
    if locus.special is not None:
        return 0.0
    thetas = 2 * np.pi * np.arange(n_theta) / n_theta
    t = radius * np.arange(1, 9) / 8.0
    s = np.linspace(0.0, 1.0, 64)
    scores = []
    for th in thetas:
        v = locus.direction(th)
        g = np.min(_gaps_at(quad, ubar + t[:, None] * v)[:, :pairs])
        if toward is None:
            scores.append(g)
            continue
        if g <= 0:
            scores.append(-np.inf)
            continue
        a = ubar + radius * v
        try:
            join = _make_join(a, v, toward, toward - a)
            scores.append(-_coupling_at(quad, join.point(s), _unit_rows(join.deriv(s)), pairs))
        except ConstructionError:
            scores.append(-np.inf)
    return float(thetas[int(np.argmax(scores))])


def _nonmixing_piece(quad, ubar, j, direction, radius, step, tol):
    """Arc of length ~radius ending at ubar with arrival tangent ``direction``."""
    c = curve_with_limit_direction(quad, ubar, j, direction, radius, step=step, tol=tol)
    pts = np.vstack([c.points, ubar])
    tangents = []
    for smp in c.samples:
        orient = -1.0 if smp.f_over_2i > 0 else 1.0
        tangents.append(orient * _unit(smp.x))
    tangents.append(_unit(direction))
    s = np.concatenate([c.arclength, [c.arclength[-1] + np.linalg.norm(ubar - c.points[-1])]])
    return NonMixingArc(s, pts, np.array(tangents))


def synthesize_path(
    quad: OperatorQuadruple,
    u_s,
    u_f,
    chain,
    p,
    mode: str = "corner",
    opts: SynthesisOptions = SynthesisOptions(),
    tol: Tolerances = DEFAULT,
) -> ControlPath:
    """Build a path from ``u_s`` to ``u_f`` through the intersections in ``chain``.

    ``chain[i]`` is an :class:`Intersection` (or ``(point, level)``) between
    levels l0+i and l0+i+1, where l0 is the level of the first one; ``p`` are
    the target amplitudes on levels l0..l0+k.  If ``u_f`` is None the path
    ends on the last outbound ray, as far from the last intersection as the
    previous waypoint is.  In ``corner`` mode the path is
    straight on both sides of each intersection; in ``nonmixing`` mode those
    pieces are integral curves of the non-mixing field with the same end
    tangents.
    """
    if mode not in ("corner", "nonmixing"):
        raise InvalidInputError(f"unknown mode {mode!r}")
    chain = [c if isinstance(c, Intersection) else Intersection(tuple(np.asarray(c[0], float)), int(c[1])) for c in chain]
    if not chain:
        raise InvalidInputError("chain must contain at least one intersection")
    p = check_target(p)
    if len(p) != len(chain) + 1:
        raise InvalidTargetError(f"{len(chain)} intersections need {len(chain) + 1} weights, got {len(p)}")
    l0 = chain[0].level
    for i, c in enumerate(chain):
        if c.level != l0 + i:
            raise InvalidInputError("chain levels must be consecutive: (l0, l0+1), (l0+1, l0+2), ...")
        dec = is_conical(quad, c.point, c.level, tolerances=tol)
        if not dec.conical:
            raise InvalidInputError(f"intersection {c.point} of levels {c.level},{c.level + 1} is not conical")
    u_s = np.asarray(u_s, dtype=float)
    pts = [u_s] + [np.asarray(c.point) for c in chain]
    if u_f is not None:
        pts.append(np.asarray(u_f, dtype=float))
    npairs = l0 + len(chain) + 1  # pairs up to the top target level
    pairs = min(quad.dim - 1, npairs)
    rng = np.random.default_rng(opts.seed)

    if opts.radius is None:
        radii = []
        for i in range(1, len(chain) + 1):
            others = [np.linalg.norm(pts[i] - q) for k, q in enumerate(pts) if k != i]
            radii.append(0.1 * min(others))
        radius = float(min(radii))
    else:
        radius = float(opts.radius)
    step = opts.arc_step if opts.arc_step is not None else radius / 200.0
    pis = split_weights(p)

    arcs = []
    marks_info = []
    cur, cur_t = u_s, None
    for i, c in enumerate(chain):
        ub = np.asarray(c.point, dtype=float)
        if opts.inbound is not None and opts.inbound[i] is not None:
            w = _unit(opts.inbound[i])
        else:
            w = _unit(ub - cur)
        inb = limit_basis(quad, ub, c.level, -w, tol=tol)
        locus = outward_locus(inbound_conicity(quad, inb, tol), pis[i], np.sqrt(max(0.0, 1 - pis[i] ** 2)), inbound_direction=-w)
        theta = opts.theta if opts.theta is not None else _probe_theta(quad, ub, locus, radius * (1.0 + opts.lead), opts.n_theta, pairs, pts[i + 2] if i + 2 < len(pts) else None)
        v = locus.direction(theta)
        angles = xi_beta(quad, ub, c.level, inb, v, tol)
        if mode == "corner":
            inner_in = Segment(ub - radius * w, ub)
            inner_out = Segment(ub, ub + radius * v)
            a_in, t_in = ub - radius * w, w
            b_out, t_out = ub + radius * v, v
        else:
            inner_in = _nonmixing_piece(quad, ub, c.level, w, radius, step, tol)
            inner_out = _nonmixing_piece(quad, ub, c.level, -v, radius, step, tol).reversed()
            a_in, t_in = inner_in.points[0], inner_in.tangents[0]
            b_out, t_out = inner_out.points[-1], inner_out.tangents[-1]
        lead_in = lead_out = None
        if opts.lead > 0:
            d = opts.lead * radius
            lead_in = Segment(a_in - d * _unit(t_in), a_in)
            lead_out = Segment(b_out, b_out + d * _unit(t_out))
            a_in, b_out = lead_in.a, lead_out.b
        if cur_t is None:
            cur_t = _endpoint_tangent(quad, u_s, l0, opts.start_tangent, a_in - u_s, tol)
        arcs += _validated_join(quad, cur, cur_t, a_in, t_in, opts, rng, pairs)
        if lead_in is not None:
            arcs.append(lead_in)
        arcs.append(inner_in)
        marks_info.append((len(arcs), c, w, v, angles, pis[i]))
        arcs.append(inner_out)
        if lead_out is not None:
            arcs.append(lead_out)
        cur, cur_t = b_out, t_out
    if u_f is None:
        u_f = np.asarray(chain[-1].point) + np.linalg.norm(pts[-1] - pts[-2]) * v
    t_end = _endpoint_tangent(quad, u_f, chain[-1].level, opts.end_tangent, u_f - cur, tol)
    arcs += _validated_join(quad, cur, cur_t, u_f, t_end, opts, rng, pairs)

    lengths = np.array([a.length for a in arcs])
    breaks = np.concatenate([[0.0], np.cumsum(lengths) / np.sum(lengths)])
    marks = [Mark(float(breaks[k]), c.level, tuple(c.point), tuple(w), tuple(v), ang, pi) for k, c, w, v, ang, pi in marks_info]
    path = reparameterize_arclength(ControlPath(tuple(arcs), breaks, tuple(marks), mode, radius))
    report = validate_path(quad, path, opts.floor, opts.samples, levels=pairs + 1)
    if not report.passed:
        raise SynthesisError(f"synthesized path fails gap validation: {report.worst}", segment=report.worst.get("arc"))
    return path
