"""Reduced-order battery cell simulation and discrepancy-aware calibration.

The package couples a single-particle-with-electrolyte cell model to two
parameter-estimation objectives - plain least squares and a profiled
marginal-likelihood objective with a Gaussian-process discrepancy model -
plus the swarm optimizer, synthetic-truth scenario machinery, and CLI needed
to reproduce the bundled calibration study end to end.
"""

from .errors import (
    CellcalError,
    ConfigError,
    EstimationFailureError,
    IllConditionedError,
    SimulationError,
)
from .estimation import (
    EstimationProblem,
    EstimationResult,
    downsample_indices,
    estimate_group,
    kog_cost,
    log_likelihood,
    ls_cost,
    model_error,
    objective_kog,
    objective_ls,
    profiled_log_likelihood,
    profiled_sigma2_f,
    sequential_estimate,
)
from .gp import (
    FeatureScaler,
    KernelHyperparameters,
    build_phi_n,
    gpr_predict,
    hybrid_predict,
    kernel,
    load_hyperparameters,
    save_hyperparameters,
)
from .ocv import OcvCurve
from .parameters import (
    FARADAY,
    GAS_CONSTANT,
    TARGET_PARAMS,
    CellParameters,
    default_cell,
    load_cell_config,
)
from .pso import PsoResult, SwarmConfig, pso_minimize
from .scenario import (
    DEFAULT_GROUP_PROFILES,
    GROUP_TARGETS,
    Dataset,
    ExperimentReport,
    ProfileSpec,
    TrialSpec,
    TruthSpec,
    build_profile,
    discrepancy_voltage,
    read_dataset_csv,
    rmse,
    run_experiment,
    run_trial,
    sample_initial_errors,
    truth_generate,
)
from .spme import (
    CellState,
    CurrentProfile,
    Trajectory,
    feature_matrix,
    make_initial_state,
    read_trajectory_csv,
    simulate,
    step,
    terminal_voltage,
    write_trajectory_csv,
)

__version__ = "0.1.0"

__all__ = [
    "CellcalError", "ConfigError", "EstimationFailureError",
    "IllConditionedError", "SimulationError",
    "EstimationProblem", "EstimationResult", "downsample_indices",
    "estimate_group", "kog_cost", "log_likelihood", "ls_cost", "model_error",
    "objective_kog", "objective_ls", "profiled_log_likelihood",
    "profiled_sigma2_f", "sequential_estimate",
    "FeatureScaler", "KernelHyperparameters", "build_phi_n", "gpr_predict",
    "hybrid_predict", "kernel", "load_hyperparameters", "save_hyperparameters",
    "OcvCurve",
    "FARADAY", "GAS_CONSTANT", "TARGET_PARAMS", "CellParameters",
    "default_cell", "load_cell_config",
    "PsoResult", "SwarmConfig", "pso_minimize",
    "DEFAULT_GROUP_PROFILES", "GROUP_TARGETS", "Dataset", "ExperimentReport",
    "ProfileSpec", "TrialSpec", "TruthSpec", "build_profile",
    "discrepancy_voltage", "read_dataset_csv", "rmse", "run_experiment",
    "run_trial", "sample_initial_errors", "truth_generate",
    "CellState", "CurrentProfile", "Trajectory", "feature_matrix",
    "make_initial_state", "read_trajectory_csv", "simulate", "step",
    "terminal_voltage", "write_trajectory_csv",
    "__version__",
]
