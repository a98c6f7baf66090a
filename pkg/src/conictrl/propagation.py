"""Time-dependent Schrodinger evolution along a control path.

The physical time is t in [0, 1/eps] and u(t) = gamma(eps t).  Each step
applies exp(-i H dt) with H taken at the step midpoint (exactly unitary),
computed for many steps at once by batched eigendecomposition and a
pairwise product tree.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import DEFAULT, Tolerances
from .errors import AtIntersectionError, InvalidInputError, StepError, TrackingError
from .hermitian import EigenSystem, OperatorQuadruple, assemble, eigensystem

log = logging.getLogger(__name__)

_CHUNK_ENTRIES = 2_000_000


@dataclass(frozen=True, eq=False)
class QuantumState:
    psi: np.ndarray

    def __post_init__(self):
        psi = np.array(self.psi, dtype=complex)
        if psi.ndim != 1:
            raise InvalidInputError("state must be a vector")
        n = float(np.linalg.norm(psi))
        if abs(n - 1.0) > 1e-10:
            raise InvalidInputError(f"state norm {n:.12f} differs from 1")
        psi.setflags(write=False)
        object.__setattr__(self, "psi", psi)

    @classmethod
    def eigenstate(cls, quad: OperatorQuadruple, u, level: int = 0) -> "QuantumState":
        return cls(eigensystem(quad, u).phi(level))


@dataclass(frozen=True, eq=False)
class PropagationResult:
    final_state: QuantumState
    occupations: np.ndarray
    transfer_error: float | None
    epsilon: float
    wall_steps: int
    norm_drift: float = 0.0
    local_error: float = 0.0
    diagnostics: dict = field(default_factory=dict)


def _state(psi0) -> np.ndarray:
    return (psi0.psi if isinstance(psi0, QuantumState) else QuantumState(psi0).psi).copy()


def _product_apply(u_steps: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """Apply u_steps[-1] @ ... @ u_steps[0] to psi by pairwise reduction."""
    m = u_steps
    n = m.shape[-1]
    while m.shape[0] > 1:
        if m.shape[0] % 2:
            m = np.concatenate([m, np.eye(n, dtype=complex)[None]], axis=0)
        m = m[1::2] @ m[0::2]
    return m[0] @ psi


def _exp_steps(h: np.ndarray, dt: float) -> np.ndarray:
    w, v = np.linalg.eigh(h)
    return (v * np.exp(-1j * w * dt)[..., None, :]) @ np.swapaxes(v.conj(), -1, -2)


def _evolve(generator, n_steps: int, dt: float, psi: np.ndarray, dim: int, local=None):
    """Integrate with midpoint exponentials; ``generator(tau_array)`` returns H at tau."""
    chunk = max(1, _CHUNK_ENTRIES // (dim * dim))
    worst = 0.0
    for s in range(0, n_steps, chunk):
        k = np.arange(s, min(n_steps, s + chunk))
        tau = (k + 0.5) / n_steps
        h = generator(tau)
        if local is not None:
            worst = max(worst, local(k, n_steps, dt))
        psi = _product_apply(_exp_steps(h, dt), psi)
    return psi, worst


def _commutator_estimate(quad, path, k, n_steps, dt):
    """dt^2/12 * ||[H(t_k), H(t_{k+1})]|| (~ dt^3 ||[H, dH/dt]|| / 12) per step."""
    ha = assemble(quad, path(k / n_steps))
    hb = assemble(quad, path((k + 1) / n_steps))
    c = ha @ hb - hb @ ha
    return float(np.max(np.linalg.norm(c, axis=(-2, -1)))) * dt**2 / 12.0


def _finish(quad, path, eps, psi, n_steps, target, drift, local, diag):
    nrm = float(np.linalg.norm(psi))
    drift = max(drift, abs(nrm - 1.0))
    if drift > 1e-8:
        log.warning("norm drift %.3e at eps=%g", drift, eps)
    psi = psi / nrm
    es = eigensystem(quad, path(1.0))
    occ = np.abs(es.vectors.conj().T @ psi) ** 2
    terr = None if target is None else transfer_error(psi, es, target)
    return PropagationResult(QuantumState(psi), occ, terr, eps, n_steps, drift, local, diag)


def _step_count(eps, steps_per_unit):
    return max(1, int(math.ceil(steps_per_unit / eps)))


def propagate(
    quad: OperatorQuadruple,
    path,
    eps: float,
    psi0,
    steps_per_unit: int = 4000,
    target=None,
    max_refinements: int = 3,
    tol: Tolerances = DEFAULT,
) -> PropagationResult:
    """Solve i dpsi/dt = H(gamma(eps t)) psi on [0, 1/eps].

    ``steps_per_unit`` is the number of steps per unit of physical time, so
    ``ceil(steps_per_unit / eps)`` steps are taken.  If the largest local
    error estimate exceeds ``tol.propagation_local`` the step count is
    doubled (at most ``max_refinements`` times) before a StepError.
    """
    if eps <= 0:
        raise InvalidInputError("eps must be positive")
    psi_init = _state(psi0)
    spu = steps_per_unit
    for attempt in range(max_refinements + 1):
        n = _step_count(eps, spu)
        dt = 1.0 / (eps * n)

        def gen(tau):
            return assemble(quad, path(tau))

        def local(k, n_steps, dt_):
            return _commutator_estimate(quad, path, k, n_steps, dt_)

        psi, worst = _evolve(gen, n, dt, psi_init.copy(), quad.dim, local)
        if worst <= tol.propagation_local:
            break
        if attempt == max_refinements:
            raise StepError(f"local error {worst:.2e} above {tol.propagation_local:.0e} with {n} steps")
        log.info("eps=%g: local error %.2e, doubling steps", eps, worst)
        spu *= 2
    drift = abs(float(np.linalg.norm(psi)) - 1.0)
    return _finish(quad, path, eps, psi, n, target, drift, worst, {"steps_per_unit": spu})


def _blocks(dim: int, band):
    blocks = [[l] for l in range(dim)]
    if band is not None:
        j0, j1 = band
        blocks = [[l] for l in range(j0)] + [list(range(j0, j1 + 1))] + [[l] for l in range(j1 + 1, dim)]
    return blocks


def _projectors(quad, path, tau, blocks):
    _, v = np.linalg.eigh(assemble(quad, path(tau)))
    out = []
    for b in blocks:
        vb = v[..., :, b]
        out.append(vb @ np.swapaxes(vb.conj(), -1, -2))
    return out


def adiabatic_generator(quad, path, eps, band=None, dtau=1e-5):
    """h_a(tau) = H - i eps sum_a P_a dP_a/dtau, written as H + (i eps / 2) sum_a [dP_a, P_a]."""
    blocks = _blocks(quad.dim, band)

    def gen(tau):
        tau = np.asarray(tau, dtype=float)
        d = np.minimum(dtau, 0.5 * np.minimum(tau, 1.0 - tau))
        d = np.where(d <= 0, dtau, d)
        p0 = _projectors(quad, path, tau, blocks)
        pp = _projectors(quad, path, np.clip(tau + d, 0, 1), blocks)
        pm = _projectors(quad, path, np.clip(tau - d, 0, 1), blocks)
        h = assemble(quad, path(tau))
        for a, b, c in zip(p0, pp, pm):
            dp = (b - c) / (2 * d)[..., None, None]
            h = h + 0.5j * eps * (dp @ a - a @ dp)
        return h

    return gen


def adiabatic_reference(
    quad: OperatorQuadruple,
    path,
    eps: float,
    psi0,
    band=None,
    steps_per_unit: int = 4000,
    target=None,
    tol: Tolerances = DEFAULT,
) -> PropagationResult:
    """Evolution under the decoupled adiabatic generator.

    It conserves the weight in each spectral block (single levels, or the
    two-level ``band`` merged into one block).
    """
    if eps <= 0:
        raise InvalidInputError("eps must be positive")
    psi = _state(psi0)
    n = _step_count(eps, steps_per_unit)
    dt = 1.0 / (eps * n)
    gen = adiabatic_generator(quad, path, eps, band)
    # check that every block stays isolated on a coarse grid
    taus = np.linspace(0, 1, 257)
    w = np.linalg.eigvalsh(assemble(quad, path(taus)))
    blocks = _blocks(quad.dim, band)
    for b in blocks[:-1]:
        g = w[:, b[-1] + 1] - w[:, b[-1]]
        if np.min(g) < tol.degeneracy * quad.scale() * 1e4:
            raise TrackingError(f"block {b} touches the next level near tau={taus[np.argmin(g)]:.4f}")
    psi, _ = _evolve(gen, n, dt, psi, quad.dim)
    drift = abs(float(np.linalg.norm(psi)) - 1.0)
    return _finish(quad, path, eps, psi, n, target, drift, 0.0, {"band": band})


def transfer_error(psi, es: EigenSystem, p) -> float:
    """Distance from psi to the nearest state sum_l p_l e^{i theta_l} phi_l.

    The minimum over phases is sqrt(2 - 2 sum_l p_l |<phi_l, psi>|).
    """
    psi = psi.psi if isinstance(psi, QuantumState) else np.asarray(psi, dtype=complex)
    p = np.asarray(p, dtype=float)
    k = len(p)
    for l in es.degenerate:
        if l <= k - 1:
            raise AtIntersectionError(f"level {l} is degenerate at the endpoint {es.point}")
    ov = np.abs(es.vectors[:, :k].conj().T @ psi)
    return float(np.sqrt(max(0.0, 2.0 - 2.0 * float(np.dot(p, ov)))))


def optimal_phases(psi, es: EigenSystem, k: int) -> np.ndarray:
    """The phases theta_l attaining the minimum in :func:`transfer_error`."""
    psi = psi.psi if isinstance(psi, QuantumState) else np.asarray(psi, dtype=complex)
    return np.angle(es.vectors[:, :k].conj().T @ psi)


@dataclass(frozen=True, eq=False)
class SweepReport:
    epsilons: np.ndarray
    errors: np.ndarray
    slope: float
    intercept: float
    residual: float
    degenerate: bool = False
    failures: dict = field(default_factory=dict)
    results: tuple = ()

    def to_dict(self) -> dict:
        return {
            "epsilons": [float(e) for e in self.epsilons],
            "errors": [float(e) for e in self.errors],
            "slope": self.slope,
            "intercept": self.intercept,
            "residual": self.residual,
            "degenerate": self.degenerate,
            "failures": {str(k): v for k, v in self.failures.items()},
        }


def fit_slope(epsilons, errors, floor: float = 1e-12):
    """Least-squares line through (log eps, log error); flags fits at the noise floor."""
    e = np.asarray(epsilons, dtype=float)
    r = np.asarray(errors, dtype=float)
    ok = np.isfinite(r) & (r > 0)
    degenerate = bool(np.sum(ok) < 2 or np.any(r[ok] < floor) or np.sum(ok) < len(r))
    if np.sum(ok) < 2:
        return float("nan"), float("nan"), float("nan"), True
    x, y = np.log(e[ok]), np.log(r[ok])
    slope, intercept = np.polyfit(x, y, 1)
    res = float(np.sqrt(np.mean((y - (slope * x + intercept)) ** 2)))
    return float(slope), float(intercept), res, degenerate


def epsilon_sweep(
    quad: OperatorQuadruple,
    path,
    psi0,
    p,
    eps_list,
    steps_per_unit: int = 4000,
    against: str = "target",
    band=None,
    workers: int | None = None,
    tol: Tolerances = DEFAULT,
) -> SweepReport:
    """Error versus eps with a log-log slope fit.

    ``against="target"`` measures the transfer error to ``p``;
    ``against="reference"`` measures ||psi - psi_ref|| to the adiabatic
    reference evolution.
    """
    eps = np.sort(np.asarray(eps_list, dtype=float))[::-1]
    if len(eps) < 4 or np.log10(eps[0] / eps[-1]) < 1.5 - 1e-9:
        raise InvalidInputError("need at least 4 eps values spanning 1.5 decades")
    if against not in ("target", "reference"):
        raise InvalidInputError(f"unknown comparison {against!r}")

    def run(e):
        res = propagate(quad, path, e, psi0, steps_per_unit, target=p, tol=tol)
        if against == "target":
            return res.transfer_error, res
        ref = adiabatic_reference(quad, path, e, psi0, band, steps_per_unit, tol=tol)
        return float(np.linalg.norm(res.final_state.psi - ref.final_state.psi)), res

    errors = np.full(len(eps), np.nan)
    results = [None] * len(eps)
    failures = {}
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(run, e) for e in eps]
        for i, fut in enumerate(futures):
            try:
                errors[i], results[i] = fut.result()
            except Exception as exc:  # annotate and keep the other runs
                failures[float(eps[i])] = f"{type(exc).__name__}: {exc}"
    slope, intercept, res, degenerate = fit_slope(eps, errors)
    return SweepReport(eps, errors, slope, intercept, res, degenerate or bool(failures), failures, tuple(results))


def default_eps_grid() -> np.ndarray:
    return 2.0 ** -np.arange(4, 11)
