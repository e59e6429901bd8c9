"""Exact oracles and KL metrics."""

from src.eval.exact import (
    ExactTarget,
    StationaryReport,
    TransitionMatrix,
    detailed_balance_residual,
    dump_matrix,
    exact_target,
    exact_transition_matrix,
    gcd_initial_distribution,
    k_step_distribution,
    proposal_total_mass,
    stationary_check,
    tvd,
)
from src.eval.fixtures import Fixture, fixture, fixture_matrix
from src.eval.kl import (
    KlReport,
    KlRow,
    bootstrap_ci,
    empirical_kl_to_lm,
    geometric_mean_ratio,
    kl_convergence_report,
    kl_reduction_ratios,
    kl_to_target,
)

__all__ = [
    "ExactTarget",
    "StationaryReport",
    "TransitionMatrix",
    "detailed_balance_residual",
    "dump_matrix",
    "exact_target",
    "exact_transition_matrix",
    "gcd_initial_distribution",
    "k_step_distribution",
    "proposal_total_mass",
    "stationary_check",
    "tvd",
    "Fixture",
    "fixture",
    "fixture_matrix",
    "KlReport",
    "KlRow",
    "bootstrap_ci",
    "empirical_kl_to_lm",
    "geometric_mean_ratio",
    "kl_convergence_report",
    "kl_reduction_ratios",
    "kl_to_target",
]
