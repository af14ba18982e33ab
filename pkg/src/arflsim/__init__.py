"""Deterministic federated-learning simulator with auto-weighted robust aggregation."""

from .aggregate import (
    AggregationRule,
    ClientContribution,
    ZeroMassRoundError,
    arfl_aggregate,
    fedavg_aggregate,
    mkrum_aggregate,
    rfa_aggregate,
)
from .corrupt import CorruptionSpec, add_feature_noise, apply_corruption, flip_labels, shuffle_labels
from .datagen import (
    PartitionSpec,
    SyntheticSpec,
    generate_synthetic,
    load_csv,
    partition_dirichlet,
    partition_iid,
    save_csv,
)
from .datasets import ClientDataset, Dataset
from .federation import FederationConfig, LossCache, RoundRecord, ServerState, initialize, run_experiment, run_round
from .model import (
    ModelArch,
    TrainConfig,
    client_update,
    empirical_loss,
    evaluate_accuracy,
    init_params,
    loss_gradient,
)
from .solver import (
    KKTResiduals,
    SolverInput,
    SolverOutput,
    kkt_residuals,
    objective_value,
    qp_oracle,
    select_p,
    solve_weights,
)

__version__ = "0.1.0"

__all__ = [
    "AggregationRule",
    "ClientContribution",
    "ClientDataset",
    "CorruptionSpec",
    "Dataset",
    "FederationConfig",
    "KKTResiduals",
    "LossCache",
    "ModelArch",
    "PartitionSpec",
    "RoundRecord",
    "ServerState",
    "SolverInput",
    "SolverOutput",
    "SyntheticSpec",
    "TrainConfig",
    "ZeroMassRoundError",
    "add_feature_noise",
    "apply_corruption",
    "arfl_aggregate",
    "client_update",
    "empirical_loss",
    "evaluate_accuracy",
    "fedavg_aggregate",
    "flip_labels",
    "generate_synthetic",
    "init_params",
    "initialize",
    "kkt_residuals",
    "load_csv",
    "loss_gradient",
    "mkrum_aggregate",
    "objective_value",
    "partition_dirichlet",
    "partition_iid",
    "qp_oracle",
    "rfa_aggregate",
    "run_experiment",
    "run_round",
    "save_csv",
    "select_p",
    "shuffle_labels",
    "solve_weights",
]
