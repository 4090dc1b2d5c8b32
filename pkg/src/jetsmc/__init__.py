"""Ginkgo jets: simulation, exact and SMC tree inference, and rate learning."""

from .core import (
    GinkgoParams,
    Topology,
    four_vector,
    grad_lambda_tree_log_likelihood,
    node_split_grad_lambda,
    node_split_log_likelihood,
    squared_mass,
    stop_cdf,
    tree_log_likelihood,
    truncated_exp_logpdf,
    validate_merge,
)
from .errors import DeadEndError, DomainError, FitAborted, JetSMCError, SizeGuardError, StructureError, TotalDeathError
from .exact import (
    brute_force_log_map,
    brute_force_log_marginal,
    count_topologies,
    enumerate_topologies,
    trellis_log_map,
    trellis_log_marginal,
)
from .search import beam_search, greedy_cluster
from .sim import GeneratedJet, generate_dataset, generate_jet
from .smc import SMCResult, run_csmc, run_ncsmc
from .variational import FitTrace, VariationalParams, elbo_estimate, fit, grad_elbo

__all__ = [
    "GinkgoParams", "Topology", "four_vector", "squared_mass",
    "truncated_exp_logpdf", "stop_cdf", "node_split_log_likelihood", "node_split_grad_lambda",
    "validate_merge", "tree_log_likelihood", "grad_lambda_tree_log_likelihood",
    "JetSMCError", "DomainError", "StructureError", "SizeGuardError", "DeadEndError", "TotalDeathError", "FitAborted",
    "count_topologies", "enumerate_topologies", "brute_force_log_marginal", "brute_force_log_map",
    "trellis_log_marginal", "trellis_log_map",
    "greedy_cluster", "beam_search",
    "GeneratedJet", "generate_jet", "generate_dataset",
    "SMCResult", "run_csmc", "run_ncsmc",
    "VariationalParams", "FitTrace", "elbo_estimate", "grad_elbo", "fit",
]
