"""Conicity matrices and the conical-intersection test.

For an orthonormal pair (psi1, psi2) the conicity matrix has rows

    ( <psi1,Hi psi2>,  <psi1,Hi psi2>^*,  <psi2,Hi psi2> - <psi1,Hi psi1> ),  i = 1,2,3.

Its determinant is purely imaginary and depends only on the span of the
pair; it is nonzero exactly when a double eigenvalue is a conical
intersection.  The real companion replaces the first two columns by the
real and imaginary parts of the first one, so that det M = -2i det M~.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import DEFAULT, Tolerances
from .errors import InvalidInputError, NotAnIntersectionError, SeparationError
from .hermitian import OperatorQuadruple, band_separation, eigensystem


def _check_pair(psi1, psi2, tol: Tolerances):
    psi1 = np.asarray(psi1, dtype=complex)
    psi2 = np.asarray(psi2, dtype=complex)
    gram = np.array(
        [[np.vdot(psi1, psi1), np.vdot(psi1, psi2)], [np.vdot(psi2, psi1), np.vdot(psi2, psi2)]]
    )
    if np.max(np.abs(gram - np.eye(2))) > tol.orthonormal:
        raise InvalidInputError("psi1, psi2 are not orthonormal")
    return psi1, psi2


def matrix_elements(quad: OperatorQuadruple, psi1, psi2):
    """Return (<psi1,Hi psi2>, <psi1,Hi psi1>, <psi2,Hi psi2>) for i = 1..3."""
    h = quad.controls
    hp2 = h @ psi2
    hp1 = h @ psi1
    off = hp2 @ psi1.conj()
    d1 = np.real(hp1 @ psi1.conj())
    d2 = np.real(hp2 @ psi2.conj())
    return off, d1, d2


@dataclass(frozen=True, eq=False)
class ConicityMatrix:
    m: np.ndarray
    basis_tag: str = ""

    @property
    def first_column(self) -> np.ndarray:
        return self.m[:, 0]

    @property
    def third_column(self) -> np.ndarray:
        return np.real(self.m[:, 2])


@dataclass(frozen=True, eq=False)
class RealConicityMatrix:
    mt: np.ndarray
    basis_tag: str = ""

    def det(self) -> float:
        return float(np.linalg.det(self.mt))


def conicity_matrix(quad: OperatorQuadruple, psi1, psi2, tag: str = "", tol: Tolerances = DEFAULT) -> ConicityMatrix:
    psi1, psi2 = _check_pair(psi1, psi2, tol)
    off, d1, d2 = matrix_elements(quad, psi1, psi2)
    m = np.column_stack([off, off.conj(), (d2 - d1).astype(complex)])
    return ConicityMatrix(m, tag)


def real_conicity(quad: OperatorQuadruple, psi1, psi2, tag: str = "", tol: Tolerances = DEFAULT) -> RealConicityMatrix:
    psi1, psi2 = _check_pair(psi1, psi2, tol)
    off, d1, d2 = matrix_elements(quad, psi1, psi2)
    mt = np.column_stack([off.real, off.imag, d2 - d1])
    rc = RealConicityMatrix(mt, tag)
    # det M = -2i det M~ holds by construction; guard against regressions
    dm = np.linalg.det(np.column_stack([off, off.conj(), (d2 - d1).astype(complex)]))
    ref = -2j * rc.det()
    if abs(dm - ref) > 1e-10 * max(1.0, abs(ref)) + 1e-14:
        raise AssertionError(f"det M = {dm} differs from -2i det M~ = {ref}")
    return rc


def conicity_det(cm: ConicityMatrix, tol: Tolerances = DEFAULT) -> complex:
    """det M, checked to be purely imaginary."""
    d = complex(np.linalg.det(cm.m))
    scale = 1.0 + float(np.prod(np.linalg.norm(cm.m, axis=0)))
    if abs(d.real) > tol.imag_det_rtol * scale:
        raise AssertionError(f"conicity determinant {d} is not purely imaginary")
    return d


def conicity_function(quad: OperatorQuadruple, u, j: int, tol: Tolerances = DEFAULT) -> complex:
    """F(u): conicity determinant on the eigenpair (phi_j, phi_{j+1}) at u."""
    es = eigensystem(quad, u, tol)
    return conicity_det(conicity_matrix(quad, es.phi(j), es.phi(j + 1), tol=tol), tol)


@dataclass(frozen=True)
class ConicalDecision:
    conical: bool
    abs_det: float
    smallest_singular_value: float
    det: complex
    gap: float
    separation: float


def is_conical(
    quad: OperatorQuadruple,
    u_bar,
    j: int,
    tol: float | None = None,
    tolerances: Tolerances = DEFAULT,
) -> ConicalDecision:
    """Decide whether levels (j, j+1) meet conically at ``u_bar``.

    The decision variable is the smallest singular value of M, compared
    with ``tol`` (default ``conical_rtol * ||M||``).  The basis of the
    double eigenspace comes from :func:`eig_sorted`; the determinant does
    not depend on it.
    """
    es = eigensystem(quad, u_bar, tolerances)
    if j < 0 or j + 1 >= es.dim:
        raise IndexError(f"band ({j}, {j + 1}) out of range")
    scale = quad.scale()
    gap = es.gap(j)
    if gap > tolerances.intersection_gap * scale:
        raise NotAnIntersectionError(f"levels {j},{j + 1} are split by {gap:.3e} at {np.asarray(u_bar)}")
    sep = band_separation(es.values, j, j + 1)
    if sep <= tolerances.separation * scale:
        raise SeparationError(f"band ({j},{j + 1}) is within {sep:.3e} of another level")
    cm = conicity_matrix(quad, es.phi(j), es.phi(j + 1), tol=tolerances)
    sv = np.linalg.svd(cm.m, compute_uv=False)
    thr = tolerances.conical_rtol * sv[0] if tol is None else tol
    d = conicity_det(cm, tolerances)
    return ConicalDecision(bool(sv[-1] > thr), abs(d), float(sv[-1]), d, gap, sep)


def cone_constant(quad: OperatorQuadruple, u_bar, j: int, directions, radii) -> float:
    """Smallest observed ratio gap(u_bar + t v) / t over the given samples."""
    u_bar = np.asarray(u_bar, dtype=float)
    worst = np.inf
    for v in np.atleast_2d(directions):
        v = v / np.linalg.norm(v)
        for t in radii:
            es = eigensystem(quad, u_bar + t * v)
            worst = min(worst, es.gap(j) / t)
    return float(worst)
