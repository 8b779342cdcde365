"""Clusterwise panel regression with one latent type per covariate block.

Units share regression coefficients within blocks of covariates, with an
independent discrete type per block.  The estimator alternates per-unit type
assignment with least-squares coefficient updates over many random starts;
companion modules provide HAC inference on the selected grouping, Cp-style
selection of the number of types, fixed-effect demeaning, Monte Carlo
designs, and an exhaustive small-sample oracle.
"""
from .estimator import (
    FitResult,
    LabelAlignment,
    LloydConfig,
    StartRecord,
    StartRun,
    align_labels,
    assignment_step,
    canonical_labels,
    full_update,
    lloyd_fit,
    lloyd_starts,
    partial_update,
    relabel_assignment,
)
from .inference import (
    InferenceError,
    InferenceResult,
    coverage_fraction,
    hac_covariance,
    moment_matrix,
    moment_vector,
    oracle_estimate,
)
from .io import PanelFormatError, PanelIndex, read_panel, read_panel_csv, read_panel_json
from .oracle import OracleResult, exhaustive_fit
from .panel import (
    Assignment,
    BlockSpec,
    ClusterConfig,
    Metrics,
    PanelData,
    ParamSet,
    composite_theta,
    evaluate_metrics,
    fitted_values,
    sample_risk,
)
from .selection import (
    SelectionResult,
    SelectionRow,
    candidate_grid,
    cp_select,
    model_loss,
    penalty_weight,
    saturated_risk,
)
from .simulation import (
    ConvergenceReport,
    DgpSpec,
    McReport,
    convergence_diagnostics,
    design_clusters,
    design_dimension,
    design_imbalance,
    design_misspec,
    design_model_select,
    design_sample_size,
    design_separation,
    generate,
    run_mc,
    run_mc_selection,
    start_convergence,
)
from .transforms import DemeanedPanel, FeFitResult, fe_fit, within_demean

__version__ = "0.1.0"

__all__ = [
    "Assignment",
    "BlockSpec",
    "ClusterConfig",
    "ConvergenceReport",
    "DemeanedPanel",
    "DgpSpec",
    "FeFitResult",
    "FitResult",
    "InferenceError",
    "InferenceResult",
    "LabelAlignment",
    "LloydConfig",
    "McReport",
    "Metrics",
    "OracleResult",
    "PanelData",
    "PanelFormatError",
    "PanelIndex",
    "ParamSet",
    "SelectionResult",
    "SelectionRow",
    "StartRecord",
    "StartRun",
    "align_labels",
    "assignment_step",
    "candidate_grid",
    "canonical_labels",
    "composite_theta",
    "convergence_diagnostics",
    "coverage_fraction",
    "cp_select",
    "design_clusters",
    "design_dimension",
    "design_imbalance",
    "design_misspec",
    "design_model_select",
    "design_sample_size",
    "design_separation",
    "evaluate_metrics",
    "exhaustive_fit",
    "fe_fit",
    "fitted_values",
    "full_update",
    "generate",
    "hac_covariance",
    "lloyd_fit",
    "lloyd_starts",
    "model_loss",
    "moment_matrix",
    "moment_vector",
    "oracle_estimate",
    "partial_update",
    "penalty_weight",
    "read_panel",
    "read_panel_csv",
    "read_panel_json",
    "relabel_assignment",
    "run_mc",
    "run_mc_selection",
    "sample_risk",
    "saturated_risk",
    "start_convergence",
    "within_demean",
]
