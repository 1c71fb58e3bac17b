"""Bandit data-driven optimization: PROOF, its exploration variants, and baselines."""

from proofbandit.environment import (
    ActionSpace,
    Dataset,
    EnvSpec,
    FiniteActions,
    UnitBall,
    generate_features,
    make_env,
    optimal_action,
    realized_cost,
    sample_labels,
)
from proofbandit.learner import (
    JointOlsModel,
    OlsModel,
    PerActionOls,
    fit_joint,
    fit_ols,
    fit_per_action,
    predict,
    prediction_error,
)
from proofbandit.ofu import (
    BanditBank,
    ConfidenceBall,
    EllipsoidState,
    barycentric_spanner,
    beta_schedule,
    contains,
    initial_state,
    update,
)
from proofbandit.solvers import (
    OptimisticObjective,
    SolveResult,
    SolverConfig,
    inner_min,
    solve_finite,
    solve_quadratic_ball,
    solve_unit_ball,
)
from proofbandit.algorithms import (
    PolicyConfig,
    RoundTrace,
    regret_accounting,
    run_proof,
    run_proof_explore,
    run_pto_only,
    run_vanilla_ofu,
    simulate,
)
from proofbandit.streams import RandomStreams, replication_seed

__version__ = "0.1.0"

__all__ = [
    "ActionSpace",
    "Dataset",
    "EnvSpec",
    "FiniteActions",
    "UnitBall",
    "generate_features",
    "make_env",
    "optimal_action",
    "realized_cost",
    "sample_labels",
    "JointOlsModel",
    "OlsModel",
    "PerActionOls",
    "fit_joint",
    "fit_ols",
    "fit_per_action",
    "predict",
    "prediction_error",
    "BanditBank",
    "ConfidenceBall",
    "EllipsoidState",
    "barycentric_spanner",
    "beta_schedule",
    "contains",
    "initial_state",
    "update",
    "OptimisticObjective",
    "SolveResult",
    "SolverConfig",
    "inner_min",
    "solve_finite",
    "solve_quadratic_ball",
    "solve_unit_ball",
    "PolicyConfig",
    "RoundTrace",
    "regret_accounting",
    "run_proof",
    "run_proof_explore",
    "run_pto_only",
    "run_vanilla_ofu",
    "simulate",
    "RandomStreams",
    "replication_seed",
]
