"""Adiabatic spread control of bilinear quantum systems through conical intersections."""

__version__ = "0.1.0"

from .config import DEFAULT, Tolerances, load_overrides
from .conicity import (
    ConicalDecision,
    ConicityMatrix,
    RealConicityMatrix,
    cone_constant,
    conicity_det,
    conicity_function,
    conicity_matrix,
    is_conical,
    real_conicity,
)
from .errors import *  # noqa: F401,F403
from .hermitian import (
    EigenSystem,
    OperatorQuadruple,
    assemble,
    band_separation,
    control_hamiltonian,
    eig_sorted,
    eigensystem,
    track_basis,
)
from .models import (
    BoxSpec,
    box_magnetic_model,
    get_model,
    load_model,
    model_hash,
    pauli_model,
    perturb_model,
    ricci_model,
    save_model,
)
from .nonmixing import (
    IntegralCurve,
    curve_with_limit_direction,
    flow_to_intersection,
    nonmixing_field_at,
    verify_gap_rate,
    x_field,
)
from .paths import (
    ControlPath,
    Intersection,
    SynthesisOptions,
    load_path,
    outward_locus,
    save_path,
    split_weights,
    synthesize_path,
    validate_path,
)
from .propagation import (
    QuantumState,
    adiabatic_reference,
    epsilon_sweep,
    fit_slope,
    propagate,
    transfer_error,
)
from .transport import (
    LimitBasis,
    TransferAngles,
    apply_limit_transformation,
    degenerate_limit_basis,
    effective_hamiltonian,
    limit_basis,
    xi_beta,
)
