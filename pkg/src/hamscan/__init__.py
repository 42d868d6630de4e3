"""hamscan: damped-harmonic-oscillator state-space kernels with
phase-space readouts (position, momentum, energy) for vision models.

Layers:
    oscillator  continuous-time analysis (eigenstructure, transfer
                functions, energy laws, stability bounds)
    scan        discrete input-dependent recurrence: segmented log-space
                parallel scan, four-direction 2D scan, explicit adjoint
    heads       energy/momentum conditioning modules (SE energy map,
                energy gates, phase-space attention, pooling)
    net         toy encoder/decoder models with an oscillator bottleneck
    training    deterministic training loop with exact-resume checkpoints
    diagnostics gate/region statistics, stability audit, scan benchmark
    tensorio    HVT1 tensor and HVW1 checkpoint file formats
    cli         `hamscan` command line entry point
"""

from .errors import (
    DegenerateEigenbasis,
    FormatError,
    HamscanError,
    InvalidConfig,
    InvalidTarget,
    LogBudgetExceeded,
    MissingCheckpoint,
    NegativeEnergyInput,
    NonFiniteInput,
    NonPositiveDamping,
    NonPositiveDecay,
    NotConverged,
    ResonancePole,
    ShapeMismatch,
)
from .oscillator import (
    EigenPair,
    OscillatorParams,
    PhasePoint,
    Regime,
    damped_phasor,
    eigenvalues,
    eigenvector_basis,
    energy_rate,
    energy_spectral_weight,
    free_response,
    lyapunov_bound,
    lyapunov_bound_series,
    simulate_normal_mode,
    transfer_magnitude,
)
from .scan import (
    ALL_DIRECTIONS,
    BankParams,
    Direction,
    PhaseState,
    ScanPlan,
    StepParams,
    default_merge,
    effective_receptive_field,
    parseval_check,
    scan_2d,
    scan_2d_adjoint,
    scan_adjoint,
    scan_parallel,
    scan_sequential,
    sinusoid_gain,
    step_params,
    step_params_adjoint,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # errors
    "HamscanError", "NonPositiveDamping", "DegenerateEigenbasis", "ResonancePole",
    "NonFiniteInput", "ShapeMismatch", "LogBudgetExceeded", "NonPositiveDecay",
    "NotConverged", "NegativeEnergyInput", "InvalidConfig", "InvalidTarget",
    "MissingCheckpoint", "FormatError",
    # oscillator
    "Regime", "OscillatorParams", "PhasePoint", "EigenPair", "eigenvalues",
    "eigenvector_basis", "damped_phasor", "free_response", "simulate_normal_mode",
    "energy_rate", "lyapunov_bound", "lyapunov_bound_series", "transfer_magnitude",
    "energy_spectral_weight",
    # scan
    "BankParams", "StepParams", "ScanPlan", "Direction", "ALL_DIRECTIONS",
    "PhaseState", "step_params", "scan_sequential", "scan_parallel", "scan_2d",
    "default_merge", "scan_adjoint", "step_params_adjoint", "scan_2d_adjoint",
    "effective_receptive_field", "parseval_check", "sinusoid_gain",
]
