"""
Lock-step execution of many independent chains.

All chains advance one step at a time. Chains sitting in the same state
draw their truncation points together, and chains sharing a prefix draw
their next GCD token together, so the work per step grows with the number
of distinct states and prefixes in play rather than with the chain count.
Acceptance ratios are computed once per (state, proposal) pair.

Every chain follows the same transition law as run_chain, but the batch
draws from one ChainRng seeded with params.rng_seed, so individual chains
do not reproduce run_chain's per-seed output.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.core.cache import LruDict
from src.core.errors import LengthExceeded
from src.core.logspace import LOG_ZERO
from src.core.rng import ChainRng, categorical_many
from src.gcd.decoder import ConstrainedDecoder, decoder_for
from src.grammar.cfg import Grammar
from src.lm.models import LanguageModel
from src.lm.scoring import lm_logprob
from src.lm.vocabulary import Sequence
from src.mcmc.chain import OVERFLOW_WARN_SHARE, ChainParams, log_accept_prob
from src.mcmc.proposals import ProposalKernel

logger = logging.getLogger(__name__)

_NO_CHAINS = np.empty(0, dtype=np.int64)


class _StateTable:
    """Distinct sequences seen by a batch, with their LM scores."""

    def __init__(self, model: LanguageModel) -> None:
        self.model = model
        self.sequences: List[Sequence] = []
        self.logprobs: List[float] = []
        self._ids: Dict[Tuple[int, ...], int] = {}

    def id_of(self, w: Sequence) -> int:
        sid = self._ids.get(w.tokens)
        if sid is None:
            sid = len(self.sequences)
            self._ids[w.tokens] = sid
            self.sequences.append(w)
            self.logprobs.append(lm_logprob(self.model, w))
        return sid


@dataclass(frozen=True)
class BatchTrace:
    """state_ids[j, c] indexes sequences for the state w_j of chain c."""

    params: ChainParams
    sequences: Tuple[Sequence, ...]
    state_ids: np.ndarray
    accepted: np.ndarray
    overflows: np.ndarray
    init_attempts: int = 1

    @property
    def n_chains(self) -> int:
        return self.state_ids.shape[1]

    def states_at(self, j: int) -> List[Sequence]:
        return [self.sequences[i] for i in self.state_ids[j]]

    def counts_at(self, j: int) -> Counter:
        """Chains per token tuple at step j."""
        ids, counts = np.unique(self.state_ids[j], return_counts=True)
        return Counter({self.sequences[i].tokens: int(c) for i, c in zip(ids, counts)})

    @property
    def acceptance_rate(self) -> float:
        steps = self.params.k * self.n_chains
        if steps == 0:
            return float("nan")
        return float(self.accepted.sum()) / steps


def _complete_batch(
    decoder: ConstrainedDecoder,
    prefix: Tuple[int, ...],
    chains: np.ndarray,
    rng: np.random.Generator,
    max_tokens: int,
) -> Tuple[List[Tuple[Sequence, np.ndarray]], np.ndarray]:
    """GCD-complete prefix once per chain; returns (words with their chains, overflowed chains)."""
    eos = decoder.vocabulary.eos
    finished: List[Tuple[Sequence, np.ndarray]] = []
    overflowed: List[np.ndarray] = []
    pending = [(prefix, chains)]
    while pending:
        tokens, members = pending.pop()
        step = decoder.step(Sequence(tokens))
        decoder.stats["draws"] += len(members)
        decoder.stats["masked_out"] += (decoder.vocabulary.size - step.mask_size) * len(members)
        draws = categorical_many(rng, step.cdf, len(members))
        for t in np.unique(draws):
            group = members[draws == t]
            if t == eos:
                finished.append((Sequence(tokens, True), group))
            elif len(tokens) >= max_tokens:
                overflowed.append(group)
            else:
                pending.append((tokens + (int(t),), group))
    decoder.stats["samples"] += len(chains)
    return finished, (np.concatenate(overflowed) if overflowed else _NO_CHAINS)


def run_chains(
    params: ChainParams,
    n_chains: int,
    m: LanguageModel,
    g: Grammar,
    decoder: Optional[ConstrainedDecoder] = None,
) -> BatchTrace:
    """Run n_chains chains of params.k steps in lock step.

    Raises LengthExceeded if some chain's initial draw still overflows
    after params.max_init_attempts attempts.
    """
    if n_chains < 1:
        raise ValueError("n_chains must be >= 1")
    decoder = decoder or decoder_for(m, g)
    kernel = ProposalKernel(params.kind, decoder, params.max_tokens)
    rng = ChainRng.from_seed(params.rng_seed)
    table = _StateTable(m)

    state_ids = np.empty((params.k + 1, n_chains), dtype=np.int64)
    pending = np.arange(n_chains)
    attempts = 0
    while len(pending):
        if attempts == params.max_init_attempts:
            raise LengthExceeded(params.max_tokens)
        attempts += 1
        finished, pending = _complete_batch(decoder, (), pending, rng.gcd, params.max_tokens)
        for w, chains in finished:
            state_ids[0, chains] = table.id_of(w)

    log_alphas: LruDict = LruDict(decoder.cache_size)

    def log_alpha_of(x_id: int, y_id: int) -> float:
        key = (x_id, y_id)
        value = log_alphas.get(key)
        if value is None:
            x, y = table.sequences[x_id], table.sequences[y_id]
            value = log_accept_prob(
                table.logprobs[x_id], table.logprobs[y_id], kernel.log_q(x, y), kernel.log_q(y, x)
            )
            log_alphas[key] = value
        return value

    accepted = np.zeros(params.k, dtype=np.int64)
    overflows = np.zeros(params.k, dtype=np.int64)
    for t in range(1, params.k + 1):
        current = state_ids[t - 1]
        proposals = current.copy()
        log_alpha = np.full(n_chains, LOG_ZERO)
        x_ids, inverse = np.unique(current, return_inverse=True)
        for group_index, x_id in enumerate(x_ids):
            members = np.flatnonzero(inverse == group_index)
            x = table.sequences[x_id]
            positions = categorical_many(rng.truncation, kernel.truncation(x).cdf, len(members))
            for position in np.unique(positions):
                chains = members[positions == position]
                finished, overflowed = _complete_batch(
                    decoder, x.tokens[:position], chains, rng.gcd, params.max_tokens
                )
                overflows[t - 1] += len(overflowed)
                for y, ys in finished:
                    y_id = table.id_of(y)
                    proposals[ys] = y_id
                    log_alpha[ys] = log_alpha_of(int(x_id), y_id)
        u = rng.bernoulli.random(n_chains)
        with np.errstate(divide="ignore"):
            accept = np.log(u) < log_alpha
        state_ids[t] = np.where(accept, proposals, current)
        accepted[t - 1] = int(accept.sum())
        logger.debug("Batch step %d: %d distinct states, %d accepted", t, len(x_ids), accepted[t - 1])

    total_overflows = int(overflows.sum())
    if params.k and total_overflows > OVERFLOW_WARN_SHARE * params.k * n_chains:
        logger.warning(
            "Batch seed=%d: %d of %d proposals exceeded max_tokens=%d",
            params.rng_seed,
            total_overflows,
            params.k * n_chains,
            params.max_tokens,
        )
    state_ids.setflags(write=False)
    return BatchTrace(
        params=params,
        sequences=tuple(table.sequences),
        state_ids=state_ids,
        accepted=accepted,
        overflows=overflows,
        init_attempts=attempts,
    )
