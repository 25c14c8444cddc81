"""Distributed successive-convex-approximation optimization over time-varying digraphs.

A library plus CLI for simulating gradient-tracking consensus optimization:
agents minimize a sum of smooth (possibly nonconvex) costs plus a convex
regularizer over a convex set, communicating by broadcast over arbitrary
directed, time-varying graphs with column-stochastic mixing.
"""

from .digraph import (
    Digraph,
    DigraphSequence,
    check_b_connectivity,
    in_neighbors,
    out_degree,
    rotating_cycle_digraph,
    rotating_cycle_sequence,
)
from .engine import (
    ConstantSchedule,
    IterationConfig,
    PolynomialSchedule,
    RecursiveSchedule,
    initialize,
    run,
)
from .harness import ExperimentConfig, parse_config, preset, run_experiment
from .metrics import RunRecord, consensus_error, optimality_measure, weighted_average
from .mixing import metropolis_weights, push_sum_weights
from .problems import (
    ProblemInstance,
    build_huber_regression,
    build_localization,
    build_quadratic_oracle,
    huber_value,
)
from .surrogates import (
    SubproblemSpec,
    huber_sca_surrogate,
    linearization_surrogate,
    localization_surrogate,
    partial_linearization_surrogate,
    solve_subproblem,
)

__version__ = "0.1.0"

__all__ = [
    "Digraph",
    "DigraphSequence",
    "check_b_connectivity",
    "in_neighbors",
    "out_degree",
    "rotating_cycle_digraph",
    "rotating_cycle_sequence",
    "ConstantSchedule",
    "IterationConfig",
    "PolynomialSchedule",
    "RecursiveSchedule",
    "initialize",
    "run",
    "ExperimentConfig",
    "parse_config",
    "preset",
    "run_experiment",
    "RunRecord",
    "consensus_error",
    "optimality_measure",
    "weighted_average",
    "metropolis_weights",
    "push_sum_weights",
    "ProblemInstance",
    "build_huber_regression",
    "build_localization",
    "build_quadratic_oracle",
    "huber_value",
    "SubproblemSpec",
    "huber_sca_surrogate",
    "linearization_surrogate",
    "localization_surrogate",
    "partial_linearization_surrogate",
    "solve_subproblem",
    "__version__",
]
