"""Controlled Hamiltonians H(u) = H0 + u1 H1 + u2 H2 + u3 H3 and their spectra.

Eigen-systems are returned with ascending eigenvalues and a deterministic
phase convention (largest-magnitude entry of each eigenvector real and
positive, ties broken by lowest index).  Continuity along curves is obtained
with :func:`track_basis`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .config import DEFAULT, Tolerances
from .errors import InvalidInputError, InvalidModelError, TrackingError, SeparationError


def _hermitian_defect(a: np.ndarray) -> float:
    scale = max(1.0, float(np.max(np.abs(a))) if a.size else 1.0)
    return float(np.max(np.abs(a - a.conj().T))) / scale if a.size else 0.0


@dataclass(frozen=True, eq=False)
class OperatorQuadruple:
    """The drift ``h0`` and the three control Hamiltonians ``h1, h2, h3``."""

    h0: np.ndarray
    h1: np.ndarray
    h2: np.ndarray
    h3: np.ndarray
    name: str = ""
    tol: Tolerances = field(default=DEFAULT, repr=False)

    def __post_init__(self):
        mats = []
        for label in ("h0", "h1", "h2", "h3"):
            m = np.array(getattr(self, label), dtype=complex)
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise InvalidModelError(f"{label} must be a square matrix, got shape {m.shape}")
            mats.append(m)
        n = mats[0].shape[0]
        for label, m in zip(("h0", "h1", "h2", "h3"), mats):
            if m.shape != (n, n):
                raise InvalidModelError(f"{label} has shape {m.shape}, expected {(n, n)}")
            d = _hermitian_defect(m)
            if d > self.tol.hermitian_rtol:
                raise InvalidModelError(f"{label} is not Hermitian (relative defect {d:.3e})")
            m.setflags(write=False)
            object.__setattr__(self, label, m)
        controls = np.stack(mats[1:])
        controls.setflags(write=False)
        object.__setattr__(self, "_controls", controls)
        object.__setattr__(self, "_scale", max(1.0, max(float(np.linalg.norm(m, 2)) for m in mats)))

    @property
    def dim(self) -> int:
        return self.h0.shape[0]

    @property
    def controls(self) -> np.ndarray:
        """Stacked ``(3, n, n)`` array of the control Hamiltonians."""
        return self._controls

    def matrices(self) -> tuple:
        return (self.h0, self.h1, self.h2, self.h3)

    def scale(self) -> float:
        """A characteristic operator norm, used to make tolerances relative."""
        return self._scale


def assemble(quad: OperatorQuadruple, u) -> np.ndarray:
    """Return H(u).  ``u`` may be a single 3-vector or an array ``(..., 3)``."""
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != 3:
        raise InvalidModelError(f"control vector must have 3 components, got shape {u.shape}")
    if not np.all(np.isfinite(u)):
        raise InvalidInputError("control vector has non-finite entries")
    h = quad.h0 + np.tensordot(u, quad.controls, axes=(-1, 0))
    # exact Hermiticity, independent of rounding in the sum
    return 0.5 * (h + np.swapaxes(h.conj(), -1, -2))


def control_hamiltonian(quad: OperatorQuadruple, v) -> np.ndarray:
    """H_v = v1 H1 + v2 H2 + v3 H3 (no drift term)."""
    return np.tensordot(np.asarray(v, dtype=float), quad.controls, axes=(-1, 0))


def fix_phases(vectors: np.ndarray) -> np.ndarray:
    """Rotate each column so its largest-magnitude entry is real positive.

    Works on a single matrix or a stack ``(..., n, n)``; ``argmax`` picks the
    lowest index among ties.
    """
    vectors = np.asarray(vectors)
    idx = np.argmax(np.abs(vectors), axis=-2)
    pivot = np.take_along_axis(vectors, idx[..., None, :], axis=-2)
    phase = pivot / np.abs(pivot)
    return vectors / phase


@dataclass(frozen=True, eq=False)
class EigenSystem:
    """Eigenvalues and orthonormal eigenvectors of H at one control point.

    ``vectors[:, l]`` belongs to ``values[l]``.  Systems produced by
    :func:`eig_sorted` are ascending; systems produced by
    :func:`track_basis` follow the labelling of their predecessor and
    record in ``order`` which ascending index each column came from.
    """

    point: np.ndarray | None
    values: np.ndarray
    vectors: np.ndarray
    degenerate: tuple = ()
    order: np.ndarray | None = None
    overlaps: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def phi(self, level: int) -> np.ndarray:
        return self.vectors[:, level]

    def gap(self, j: int) -> float:
        """lambda_{j+1} - lambda_j."""
        return float(self.values[j + 1] - self.values[j])

    def gaps(self) -> np.ndarray:
        return np.diff(self.values)


def eig_sorted(h: np.ndarray, point=None, tol: Tolerances = DEFAULT) -> EigenSystem:
    """Ascending eigen-decomposition of a Hermitian matrix with fixed phases.

    Near-degenerate pairs (gap below ``tol.degeneracy``) are listed in
    ``degenerate``; inside such eigenspaces the basis is arbitrary.
    """
    h = np.asarray(h, dtype=complex)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise InvalidInputError(f"expected a square matrix, got shape {h.shape}")
    defect = _hermitian_defect(h)
    if defect > tol.hermitian_input:
        raise InvalidInputError(f"matrix is not Hermitian (relative defect {defect:.3e})")
    values, vectors = np.linalg.eigh(0.5 * (h + h.conj().T))
    vectors = fix_phases(vectors)
    scale = max(1.0, float(np.max(np.abs(values))))
    degenerate = tuple(int(l) for l in np.nonzero(np.diff(values) < tol.degeneracy * scale)[0])
    pt = None if point is None else np.array(point, dtype=float)
    return EigenSystem(pt, values, vectors, degenerate)


def eigensystem(quad: OperatorQuadruple, u, tol: Tolerances = DEFAULT) -> EigenSystem:
    return eig_sorted(assemble(quad, u), point=u, tol=tol)


def eig_batch(quad: OperatorQuadruple, points: np.ndarray):
    """Vectorised ascending eigenvalues/vectors over an array of points."""
    return np.linalg.eigh(assemble(quad, points))


def track_basis(prev: EigenSystem, nxt: EigenSystem, tol: Tolerances = DEFAULT) -> EigenSystem:
    """Relabel and rephase ``nxt`` so that it continues ``prev``.

    Columns are matched by maximal overlap magnitude (an assignment problem,
    solved exactly) and each matched column is rotated so that
    <prev_l, next_l> is real and positive.
    """
    if prev.vectors.shape != nxt.vectors.shape:
        raise InvalidInputError("eigen-systems have different dimensions")
    ov = prev.vectors.conj().T @ nxt.vectors
    mag = np.abs(ov)
    rows, cols = linear_sum_assignment(-mag)
    perm = cols[np.argsort(rows)]
    best = mag[np.arange(prev.dim), perm]
    if np.min(best) < tol.min_overlap:
        bad = int(np.argmin(best))
        raise TrackingError(
            f"level {bad}: best overlap {best[bad]:.3f} below {tol.min_overlap}; refine the step"
        )
    vec = nxt.vectors[:, perm]
    o = ov[np.arange(prev.dim), perm]
    vec = vec * (np.abs(o) / o)[None, :]
    base_order = perm if nxt.order is None else np.asarray(nxt.order)[perm]
    return EigenSystem(nxt.point, nxt.values[perm], vec, nxt.degenerate, base_order, best)


def projector(vectors: np.ndarray) -> np.ndarray:
    """Orthogonal projector onto the span of the given orthonormal columns."""
    return vectors @ vectors.conj().T


def band_projection(es: EigenSystem, j: int) -> np.ndarray:
    """Rank-2 projector onto span{phi_j, phi_{j+1}}."""
    if j < 0 or j + 1 >= es.dim:
        raise IndexError(f"band ({j}, {j + 1}) out of range for dimension {es.dim}")
    p = projector(es.vectors[:, j : j + 2])
    return 0.5 * (p + p.conj().T)


@dataclass(frozen=True)
class SeparationWindow:
    """Levels ``j0..j1`` confined to ``[f1, f2]`` with a margin ``gamma``."""

    j0: int
    j1: int
    f1: float
    f2: float
    gamma: float

    def check(self, es: EigenSystem) -> None:
        inside = es.values[self.j0 : self.j1 + 1]
        if np.any(inside < self.f1) or np.any(inside > self.f2):
            raise SeparationError(f"levels {self.j0}..{self.j1} leave [{self.f1}, {self.f2}]")
        others = np.concatenate([es.values[: self.j0], es.values[self.j1 + 1 :]])
        dist = np.maximum(self.f1 - others, others - self.f2)
        if others.size and np.min(dist) <= self.gamma:
            raise SeparationError(
                f"an outside eigenvalue is within {np.min(dist):.3e} of the window (margin {self.gamma})"
            )


def band_separation(values: np.ndarray, j0: int, j1: int) -> float:
    """Distance from levels ``j0..j1`` to the nearest other eigenvalue (inf if none)."""
    below = values[j0] - values[j0 - 1] if j0 > 0 else np.inf
    above = values[j1 + 1] - values[j1] if j1 + 1 < len(values) else np.inf
    return float(min(below, above))
