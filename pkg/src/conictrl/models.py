"""Built-in example systems, random perturbations and JSON persistence."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import DEFAULT, Tolerances
from .errors import InvalidModelError
from .hermitian import OperatorQuadruple


def pauli_model() -> OperatorQuadruple:
    """Spin 1/2 in a magnetic field: H(u) = u1 sx + u2 sy + u3 sz."""
    sx = np.array([[0, 1], [1, 0]], dtype=complex)
    sy = np.array([[0, -1j], [1j, 0]])
    sz = np.array([[1, 0], [0, -1]], dtype=complex)
    return OperatorQuadruple(np.zeros((2, 2), complex), sx, sy, sz, name="pauli")


def ricci_model() -> OperatorQuadruple:
    """Three-level example with a double ground eigenvalue at u = 0."""
    h0 = np.diag([0, 0, 1]).astype(complex)
    h1 = np.array([[1, 1j, 0], [-1j, 0, 1], [0, 1, -1]])
    h2 = np.array([[0, 0, 1j], [0, 1, 0], [-1j, 0, 0]])
    h3 = np.array([[-1, 1, -1], [1, 1, 0], [-1, 0, 0]], dtype=complex)
    return OperatorQuadruple(h0, h1, h2, h3, name="ricci")


# --- box with a magnetic potential -------------------------------------------

BOX_LENGTHS = (1.0, np.sqrt(3.0), np.sqrt(5.0))


@dataclass(frozen=True)
class BoxSpec:
    """Truncation of the sine basis: modes 1..max_index on each axis."""

    max_index: int = 3
    quad_points: int = 64

    def __post_init__(self):
        if self.max_index < 1:
            raise InvalidModelError("max_index must be positive")
        if self.quad_points < 2 * self.max_index + 4:
            raise InvalidModelError("too few quadrature points for the requested modes")

    @property
    def size(self) -> int:
        return self.max_index**3

    def modes(self) -> list:
        """Multi-indices (j1, j2, j3) in lexicographic order."""
        r = range(1, self.max_index + 1)
        return [(a, b, c) for a in r for b in r for c in r]


def _cos_moment(c: float, length: float, power: int) -> float:
    """Integral of x**power * cos(c x) over (0, L) when sin(c L) = 0."""
    if c == 0.0:
        return length ** (power + 1) / (power + 1)
    cl = np.cos(c * length)
    if power == 0:
        return 0.0
    if power == 1:
        return (cl - 1.0) / c**2
    if power == 2:
        return 2.0 * length * cl / c**2
    raise ValueError(power)


def sine_integrals_analytic(nmax: int, length: float):
    """Closed-form X, X^2 and D = <s_j, s_k'> for s_j = sqrt(2/L) sin(j pi x / L)."""
    x1 = np.zeros((nmax, nmax))
    x2 = np.zeros((nmax, nmax))
    d = np.zeros((nmax, nmax))
    for j in range(1, nmax + 1):
        for k in range(1, nmax + 1):
            a, b = j * np.pi / length, k * np.pi / length
            # sin(ax) sin(bx) = [cos((a-b)x) - cos((a+b)x)] / 2
            x1[j - 1, k - 1] = (_cos_moment(a - b, length, 1) - _cos_moment(a + b, length, 1)) / length
            x2[j - 1, k - 1] = (_cos_moment(a - b, length, 2) - _cos_moment(a + b, length, 2)) / length
            # sin(ax) cos(bx) = [sin((a+b)x) + sin((a-b)x)] / 2
            s = 0.0
            for c in (a + b, a - b):
                if c != 0.0:
                    s += (1.0 - np.cos(c * length)) / c
            d[j - 1, k - 1] = b * s / length
    return x1, x2, d


def sine_integrals_quadrature(nmax: int, length: float, npts: int):
    """Same integrals by Gauss-Legendre quadrature."""
    nodes, weights = np.polynomial.legendre.leggauss(npts)
    x = 0.5 * length * (nodes + 1.0)
    w = 0.5 * length * weights
    j = np.arange(1, nmax + 1)[:, None]
    s = np.sqrt(2.0 / length) * np.sin(j * np.pi * x / length)
    ds = np.sqrt(2.0 / length) * (j * np.pi / length) * np.cos(j * np.pi * x / length)
    x1 = (s * w * x) @ s.T
    x2 = (s * w * x**2) @ s.T
    d = (s * w) @ ds.T
    return x1, x2, d


def box_h0_diagonal(spec: BoxSpec) -> np.ndarray:
    """pi^2/2 (j1^2 + j2^2/3 + j3^2/5) for every mode, lexicographic order."""
    m = np.array(spec.modes(), dtype=float)
    return 0.5 * np.pi**2 * (m[:, 0] ** 2 + m[:, 1] ** 2 / 3.0 + m[:, 2] ** 2 / 5.0)


def box_magnetic_model(spec: BoxSpec = BoxSpec(), tol: Tolerances = DEFAULT) -> OperatorQuadruple:
    """Galerkin truncation of the box Hamiltonian with potentials V1, V2 and field A.

    V1 = x2^2 + x3^2, V2 = x2 x3 and A = (0, -x3/2, x2/2).  Since div A = 0 the
    magnetic term is -2i A.grad = i (x3 d/dx2 - x2 d/dx3).
    """
    n = spec.max_index
    eye = np.eye(n)
    mats = []
    for length in BOX_LENGTHS:
        quad = sine_integrals_quadrature(n, length, spec.quad_points)
        exact = sine_integrals_analytic(n, length)
        err = max(float(np.max(np.abs(q - e))) for q, e in zip(quad, exact))
        if err > 1e-8:
            raise InvalidModelError(f"box integrals disagree with closed form by {err:.2e} (L={length})")
        mats.append(quad)
    (_, _, _), (x2a, x2sq, d2), (x3a, x3sq, d3) = mats

    def kron3(a, b, c):
        return np.kron(np.kron(a, b), c)

    h0 = np.diag(box_h0_diagonal(spec)).astype(complex)
    h1 = kron3(eye, x2sq, eye) + kron3(eye, eye, x3sq)
    h2 = kron3(eye, x2a, x3a)
    h3 = 1j * (kron3(eye, d2, x3a) - kron3(eye, x2a, d3))
    out = []
    for h in (h0, h1, h2, h3):
        h = np.asarray(h, dtype=complex)
        sym = 0.5 * (h + h.conj().T)
        if np.max(np.abs(h - sym)) > 1e-10:
            raise InvalidModelError("box matrix asymmetry above 1e-10")
        out.append(sym)
    return OperatorQuadruple(*out, name=f"box{n}", tol=tol)


def mode_index(spec: BoxSpec, mode) -> int:
    return spec.modes().index(tuple(mode))


# --- perturbations -----------------------------------------------------------


def _random_hermitian(rng: np.random.Generator, n: int) -> np.ndarray:
    g = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return g + g.conj().T


def perturb_model(quad: OperatorQuadruple, delta: float, seed: int) -> OperatorQuadruple:
    """Add to each matrix a random Hermitian matrix of spectral norm delta/4."""
    if delta < 0:
        raise InvalidModelError("delta must be non-negative")
    rng = np.random.default_rng(seed)
    out = []
    for h in quad.matrices():
        e = _random_hermitian(rng, quad.dim)
        e *= (delta / 4.0) / np.linalg.norm(e, 2)
        out.append(h + e)
    return OperatorQuadruple(*out, name=f"{quad.name}+d{delta:g}s{seed}", tol=quad.tol)


# --- persistence -------------------------------------------------------------


def quad_to_dict(quad: OperatorQuadruple) -> dict:
    data = {"dim": quad.dim}
    for label, m in zip(("h0", "h1", "h2", "h3"), quad.matrices()):
        data[label] = [[[float(z.real), float(z.imag)] for z in row] for row in m]
    if quad.name:
        data["name"] = quad.name
    return data


def quad_from_dict(data, tol: Tolerances = DEFAULT) -> OperatorQuadruple:
    if not isinstance(data, dict):
        raise InvalidModelError("model file must contain a JSON object")
    if "dim" not in data:
        raise InvalidModelError("missing field 'dim'")
    n = data["dim"]
    if not isinstance(n, int) or n < 1:
        raise InvalidModelError(f"field 'dim' must be a positive integer, got {n!r}")
    mats = []
    for label in ("h0", "h1", "h2", "h3"):
        if label not in data:
            raise InvalidModelError(f"missing field '{label}'")
        try:
            arr = np.array(data[label], dtype=float)
        except (TypeError, ValueError) as exc:
            raise InvalidModelError(f"field '{label}' is not an array of [re, im] pairs") from exc
        if arr.shape != (n, n, 2):
            raise InvalidModelError(f"field '{label}' has shape {arr.shape}, expected {(n, n, 2)}")
        m = arr[..., 0] + 1j * arr[..., 1]
        bad = np.abs(m - m.conj().T) > tol.hermitian_rtol * max(1.0, float(np.max(np.abs(m))))
        if np.any(bad):
            r, c = map(int, np.argwhere(bad)[0])
            raise InvalidModelError(f"field '{label}' is not Hermitian at index ({r}, {c})")
        mats.append(m)
    return OperatorQuadruple(*mats, name=str(data.get("name", "")), tol=tol)


def save_model(quad: OperatorQuadruple, path) -> None:
    Path(path).write_text(json.dumps(quad_to_dict(quad), sort_keys=True) + "\n")


def load_model(path, tol: Tolerances = DEFAULT) -> OperatorQuadruple:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InvalidModelError(f"malformed model file {path}: {exc}") from exc
    return quad_from_dict(data, tol)


def model_hash(quad: OperatorQuadruple) -> str:
    """SHA-256 of the canonical JSON form, for provenance headers."""
    blob = json.dumps(quad_to_dict(quad), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


BUILTIN = {
    "pauli": pauli_model,
    "ricci": ricci_model,
    "box": box_magnetic_model,
}


def get_model(name_or_path: str, tol: Tolerances = DEFAULT) -> OperatorQuadruple:
    """Built-in model by name, otherwise a JSON model file."""
    if name_or_path in BUILTIN:
        return BUILTIN[name_or_path]()
    return load_model(name_or_path, tol)
