"""Numerical tolerances used throughout the package.

All thresholds live in one frozen record so that tests and the CLI can
tighten or loosen them uniformly (``--tol-overrides``).
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    hermitian_rtol: float = 1e-12
    hermitian_input: float = 1e-10
    orthonormal: float = 1e-10
    degeneracy: float = 1e-10
    intersection_gap: float = 1e-6
    separation: float = 1e-6
    min_overlap: float = 0.5
    conical_rtol: float = 1e-8
    imag_det_rtol: float = 1e-10
    field_min: float = 1e-12
    gap_tol: float = 1e-7
    limit_basis: float = 1e-6
    tangent: float = 1e-3
    propagation_local: float = 1e-8

    def replace(self, **changes) -> "Tolerances":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


DEFAULT = Tolerances()


def load_overrides(path, base: Tolerances = DEFAULT) -> Tolerances:
    """Read a JSON object of field overrides and apply it to ``base``."""
    with open(path) as fh:
        data = json.load(fh)
    known = {f.name for f in dataclasses.fields(Tolerances)}
    unknown = set(data) - known
    if unknown:
        raise KeyError(f"unknown tolerance fields: {sorted(unknown)}")
    return base.replace(**{k: float(v) for k, v in data.items()})
