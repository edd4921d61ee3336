"""Simulator and analytical-prediction toolkit for a multitype spread process
on the complete graph, with Monte Carlo validation of its limit laws."""

from .branching import (
    CouplingResult,
    GWRun,
    classify_survival,
    extinction_probability,
    grow_tree,
    run_coupled,
)
from .harness import (
    CheckRecord,
    ExperimentConfig,
    ReplicateTable,
    ValidationReport,
    chi_square_gof,
    chi_square_independence,
    derive_seed,
    empirical_covariance_check,
    ks_normality,
    run_experiment,
    run_replicates,
)
from .limits import (
    CovarianceKernel,
    Predictions,
    c_w_value,
    clt_variances,
    covariance,
    f_theta,
    lln_targets,
    predictions,
    solve_theta,
)
from .model import (
    InstanceSpec,
    MeanMatrix,
    ModelSpec,
    OffspringLaw,
    mean_matrix,
    multinomial_split,
    realize_instance,
    spectral_radius,
    validate_spec,
)
from .simulate import (
    ChainState,
    ContinuousSnapshot,
    EpidemicOptions,
    EpidemicResult,
    continuous_snapshot,
    initial_state,
    run_epidemic,
    step,
    write_replicates_csv,
)

__version__ = "0.1.0"

__all__ = [
    "ChainState",
    "CheckRecord",
    "ContinuousSnapshot",
    "CouplingResult",
    "CovarianceKernel",
    "EpidemicOptions",
    "EpidemicResult",
    "ExperimentConfig",
    "GWRun",
    "InstanceSpec",
    "MeanMatrix",
    "ModelSpec",
    "OffspringLaw",
    "Predictions",
    "ReplicateTable",
    "ValidationReport",
    "c_w_value",
    "chi_square_gof",
    "chi_square_independence",
    "classify_survival",
    "clt_variances",
    "continuous_snapshot",
    "covariance",
    "derive_seed",
    "empirical_covariance_check",
    "extinction_probability",
    "f_theta",
    "grow_tree",
    "initial_state",
    "ks_normality",
    "lln_targets",
    "mean_matrix",
    "multinomial_split",
    "predictions",
    "realize_instance",
    "run_coupled",
    "run_epidemic",
    "run_experiment",
    "run_replicates",
    "solve_theta",
    "spectral_radius",
    "step",
    "validate_spec",
    "write_replicates_csv",
]
