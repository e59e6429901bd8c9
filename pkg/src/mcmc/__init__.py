"""Metropolis-Hastings sampling over grammatical sequences."""

from src.mcmc.batch import BatchTrace, run_chains
from src.mcmc.chain import (
    ChainParams,
    ChainStep,
    ChainTrace,
    accept_prob,
    log_accept_prob,
    run_chain,
)
from src.mcmc.proposals import (
    ProposalKernel,
    ProposalKind,
    TruncationDist,
    proposal_logprob,
    propose,
    truncation_dist,
)
from src.mcmc.trace_io import RunTrace, read_traces, single_sample_records, trace_records, write_records

__all__ = [
    "BatchTrace",
    "run_chains",
    "ChainParams",
    "ChainStep",
    "ChainTrace",
    "accept_prob",
    "log_accept_prob",
    "run_chain",
    "ProposalKernel",
    "ProposalKind",
    "TruncationDist",
    "proposal_logprob",
    "propose",
    "truncation_dist",
    "RunTrace",
    "read_traces",
    "single_sample_records",
    "trace_records",
    "write_records",
]
