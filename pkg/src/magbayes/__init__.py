"""Adaptive Bayesian magnetometry with sequential Monte Carlo inference.

Single-spin Ramsey interferometry turns a magnetic field into a precession
frequency; this package estimates that frequency online, choosing each
evolution time from the current posterior, and tracks fields that drift or
jump.  Measurements come from a simulated spin, from recorded fringe files
replayed measurement by measurement, or from any object exposing the small
backend protocol in :mod:`magbayes.experiments`.
"""

from .analysis import (
    NoPeakError,
    OverheadBudget,
    ScalingReport,
    SpectrumEstimate,
    absolute_time,
    bootstrap_error,
    fft_estimate,
    fit_scaling,
    percentile_bands,
    prior_information,
    quadratic_loss,
    saturation_epoch,
    sensitivity,
)
from .estimator import FieldTracker, MagneticFieldLearner
from .experiments import (
    EpochDatum,
    MajorityVote,
    ProbabilisticVote,
    ReplayBackend,
    SimulatorBackend,
    SimulatorConfig,
    calibrate,
    extract_outcome,
    simulate_fringe,
)
from .fringeio import (
    FringeDataset,
    FringeFormatError,
    load_fringe,
    read_fringe_binary,
    read_fringe_text,
    save_fringe,
    write_fringe_binary,
    write_fringe_text,
)
from .heuristics import (
    DegenerateEnsembleError,
    HeuristicConfig,
    choose_tau,
    derive_normalizers,
    pgh_multi,
    pgh_single,
)
from .inference import (
    DegenerateUpdateError,
    GaussianPrior,
    ParticleBudget,
    ParticleEnsemble,
    ResamplerConfig,
    UniformPrior,
    particle_count_rule,
)
from .model import (
    GAMMA_E,
    ModelParams,
    PhaseSingularityError,
    PhysicalConstants,
    RamseyLikelihood,
    ReadoutModel,
    field_from_omega,
    fisher_bound_dephasing,
    fisher_information,
    likelihood_lossy,
    likelihood_ramsey,
    omega_from_field,
    ramsey_p0,
    van_trees_bound,
)
from .protocol import (
    EpochRecord,
    InferenceConfig,
    RunTrace,
    TrackerConfig,
    nms_error,
    run_estimation,
    run_tracking,
)
from .waveforms import (
    ChirpedField,
    ConstantField,
    OrnsteinUhlenbeckField,
    SinusoidField,
    StepwiseField,
)

__version__ = "0.1.0"

__all__ = [
    "GAMMA_E",
    "ChirpedField",
    "ConstantField",
    "DegenerateEnsembleError",
    "DegenerateUpdateError",
    "EpochDatum",
    "EpochRecord",
    "FieldTracker",
    "FringeDataset",
    "FringeFormatError",
    "GaussianPrior",
    "HeuristicConfig",
    "InferenceConfig",
    "MagneticFieldLearner",
    "MajorityVote",
    "ModelParams",
    "NoPeakError",
    "OrnsteinUhlenbeckField",
    "OverheadBudget",
    "ParticleBudget",
    "ParticleEnsemble",
    "PhaseSingularityError",
    "PhysicalConstants",
    "ProbabilisticVote",
    "RamseyLikelihood",
    "ReadoutModel",
    "ReplayBackend",
    "ResamplerConfig",
    "RunTrace",
    "ScalingReport",
    "SimulatorBackend",
    "SimulatorConfig",
    "SinusoidField",
    "SpectrumEstimate",
    "StepwiseField",
    "TrackerConfig",
    "UniformPrior",
    "absolute_time",
    "bootstrap_error",
    "calibrate",
    "choose_tau",
    "derive_normalizers",
    "extract_outcome",
    "fft_estimate",
    "field_from_omega",
    "fisher_bound_dephasing",
    "fisher_information",
    "fit_scaling",
    "likelihood_lossy",
    "likelihood_ramsey",
    "load_fringe",
    "nms_error",
    "omega_from_field",
    "particle_count_rule",
    "percentile_bands",
    "pgh_multi",
    "pgh_single",
    "prior_information",
    "quadratic_loss",
    "ramsey_p0",
    "read_fringe_binary",
    "read_fringe_text",
    "run_estimation",
    "run_tracking",
    "saturation_epoch",
    "save_fringe",
    "sensitivity",
    "simulate_fringe",
    "van_trees_bound",
    "write_fringe_binary",
    "write_fringe_text",
]
