"""Zeroth-order optimization in random subspaces.

Estimate gradients of a black-box objective from paired function
evaluations, optimize them in a structured low-dimensional
reparameterization, and reproduce the bundled benchmark experiments
from the command line (``subzero --help``).
"""

from .config import RunConfig, config_hash, load_config, parse_config, write_config
from .errors import (
    BudgetExceededError,
    ConfigError,
    DimensionError,
    EvaluationError,
    UnsupportedObjectiveError,
)
from .estimator import (
    GradientEstimate,
    PerturbationDirection,
    PerturbationStream,
    QueryLedger,
    n_spsa,
    sample_perturbation,
    spsa_sample,
)
from .objectives import (
    Batch,
    MeteredObjective,
    ObjectiveSpec,
    ReparamObjective,
    make_objective,
)
from .optimizer import (
    GainSchedule,
    OptimizerState,
    TraceRecord,
    clip_coefficient,
    gains,
    load_state,
    run_fo_sgd,
    run_naive_zo,
    run_training,
    save_state,
    zo_step,
)
from .reparam import (
    FullPrompt,
    IntrinsicParams,
    PromptShape,
    VariantKind,
    compose_weight,
    delta,
    flatten,
    init_intrinsic,
    parse_params,
    reconstruct_prompt,
    serialize_params,
    unflatten,
)
from .harness import (
    compare_methods,
    emit_plot_data,
    read_trace,
    run_one,
    run_to_files,
    write_trace,
)
from .transforms import (
    DenseProjection,
    FastfoodProjection,
    build_dense,
    build_fastfood,
    next_pow_two,
    per_token_projections,
    project,
    walsh_hadamard,
)
from .verify import (
    VerificationReport,
    ablation_grid,
    dimension_scaling_experiment,
    threshold_sweep,
    verify_second_moment,
    verify_unbiasedness,
)

__version__ = "0.1.0"

__all__ = [
    "Batch",
    "BudgetExceededError",
    "ConfigError",
    "DenseProjection",
    "DimensionError",
    "EvaluationError",
    "FastfoodProjection",
    "FullPrompt",
    "GainSchedule",
    "GradientEstimate",
    "IntrinsicParams",
    "MeteredObjective",
    "ObjectiveSpec",
    "OptimizerState",
    "PerturbationDirection",
    "PerturbationStream",
    "PromptShape",
    "QueryLedger",
    "ReparamObjective",
    "RunConfig",
    "TraceRecord",
    "UnsupportedObjectiveError",
    "VariantKind",
    "VerificationReport",
    "ablation_grid",
    "build_dense",
    "build_fastfood",
    "clip_coefficient",
    "compare_methods",
    "compose_weight",
    "config_hash",
    "delta",
    "dimension_scaling_experiment",
    "emit_plot_data",
    "flatten",
    "gains",
    "init_intrinsic",
    "load_config",
    "load_state",
    "make_objective",
    "n_spsa",
    "next_pow_two",
    "parse_config",
    "parse_params",
    "per_token_projections",
    "project",
    "read_trace",
    "reconstruct_prompt",
    "run_fo_sgd",
    "run_naive_zo",
    "run_one",
    "run_to_files",
    "run_training",
    "sample_perturbation",
    "save_state",
    "serialize_params",
    "spsa_sample",
    "threshold_sweep",
    "unflatten",
    "verify_second_moment",
    "verify_unbiasedness",
    "walsh_hadamard",
    "write_config",
    "write_trace",
    "zo_step",
]
