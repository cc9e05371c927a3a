"""Distribution-system state estimation toolkit.

Library + CLI for estimating bus voltages in radial feeders from
partial, noisy, possibly corrupted measurements. Ships a conventional
weighted-least-squares estimator (with largest-normalized-residual bad
data removal) alongside two matrix-completion estimators that remain
usable when the measurement set is unobservable, plus an AC power-flow
ground-truth generator and a seeded Monte Carlo experiment harness.
"""

__version__ = "0.1.0"

from .errors import (
    CaseParseError,
    CaseValidationError,
    DsseError,
    ExtractionError,
    InvalidBranchError,
    InvalidFadError,
    LinearModelError,
    MeasurementNotFoundError,
    NonConvergenceError,
    PowerFlowDivergenceError,
    ProgramBuildError,
    UnobservableError,
)
from .network import (
    Branch,
    Bus,
    Network,
    branch_admittance,
    build_ybus,
    builtin_ieee33,
    load_case,
    network_to_json,
    parse_case,
)
from .powerflow import (
    LinearModel,
    PowerFlowResult,
    branch_currents,
    build_linear_model,
    injected_power,
    nominal_injections,
    solve_ac,
)
from .measurement_model import MeasurementKind, flat_state
from .measurements import (
    Measurement,
    MeasurementSet,
    ObservabilityReport,
    add_noise,
    critical_measurements,
    full_measurement_set,
    inject_bad_random,
    inject_bad_scaled,
    measurements_from_json,
    measurements_to_json,
    observability,
    sample_fad,
)
from .estimators import (
    EstimationResult,
    RmcseWeights,
    StateMatrixSchema,
    build_state_matrix,
    mcse,
    normalized_residuals,
    rmcse,
    wls,
    wls_lnr,
)
from .experiments import (
    ExperimentConfig,
    MapeReport,
    SingleBadReport,
    SweepReport,
    derive_seed,
    mape,
    run_bad_sweep,
    run_fad_sweep,
    run_single_bad,
)
