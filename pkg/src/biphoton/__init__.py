"""Gated biphoton states from a quantum-dot cascade: model, simulation, tomography and fitting."""

__version__ = "0.1.0"

from .cascade import (
    DOT_PARAMS,
    HBAR_UEV_PS,
    CascadeParams,
    GateWindow,
    gate_sequence,
    gated_density_matrix,
    i0_integral,
    ic_integral,
    k_fraction,
    pure_state_at,
    zero_gate_limits,
)
from .fit import FitProblem, FitResult, fit, fit_objective
from .measures import (
    StatePoint,
    chsh_parameter,
    correlation,
    fidelity_from_correlations,
    fidelity_phi_plus,
    linear_entropy,
    state_point,
    tangle,
    werner_curve,
)
from .qcore import DensityMatrix, PolarizationBasis, expectation, hermitian_eigen, projector, werner_state
from .simulator import SimConfig, TdcHistogram, find_time_origin, gate_counts, sample_events, simulate_experiment
from .tomography import CoincidenceTable, expected_counts, linear_inversion_start, nll_objective, reconstruct
