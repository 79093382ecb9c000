"""Federated constrained optimization with a proximal augmented-Lagrangian
outer loop and an inexact consensus-ADMM inner solver, plus a centralized
baseline, an independent KKT auditor, and an experiment CLI."""

from .admm import ConsensusProblem, InnerConfig, run_inner
from .audit import assert_output_contract, kkt_residuals
from .centralized import run_centralized
from .experiments import ExperimentConfig, run_experiment
from .model import (
    ClientProblem,
    Cone,
    ConstraintBlock,
    EmptyBlock,
    LinearBlock,
    MultiplierState,
    ProblemSpec,
    Quadratic,
    SimpleTerm,
    SmoothFunction,
    ZeroFunction,
    ZeroTerm,
    eval_aggregate_objective,
    project_cone_dual,
)
from .outer import OuterConfig, build_merits, run_outer
from .problems import (
    LabeledDataset,
    build_fairness_problem,
    build_np_problem,
    generate_lcqp,
    lcqp_oracle,
    lcqp_problem,
    load_csv,
    partition_stratified,
)
from .proxgrad import CompositeProblem, StationarityCertificate, solve_composite

__version__ = "0.1.0"
