"""Metropolis-Hastings over grammatical sequences with GCD proposals."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

from src.core.errors import LengthExceeded
from src.core.logspace import LOG_ONE, LOG_ZERO
from src.core.rng import ChainRng
from src.gcd.decoder import ConstrainedDecoder, decoder_for
from src.grammar.cfg import Grammar
from src.lm.models import LanguageModel
from src.lm.scoring import lm_logprob
from src.lm.vocabulary import Sequence
from src.mcmc.proposals import ProposalKernel, ProposalKind

logger = logging.getLogger(__name__)

# share of auto-rejected overflow proposals above which a chain warns
OVERFLOW_WARN_SHARE = 0.5


@dataclass(frozen=True)
class ChainParams:
    kind: ProposalKind
    k: int
    max_tokens: int = 512
    rng_seed: int = 42
    max_init_attempts: int = 100

    def __post_init__(self) -> None:
        if self.k < 0:
            raise ValueError("k must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.max_init_attempts < 1:
            raise ValueError("max_init_attempts must be >= 1")


@dataclass(frozen=True)
class ChainStep:
    step: int
    proposal: Optional[Sequence]
    position: int
    log_qf: float
    log_qr: float
    alpha: float
    accepted: bool
    length_exceeded: bool = False


@dataclass(frozen=True)
class ChainTrace:
    """States w_0..w_k and the per-step proposal record."""

    params: ChainParams
    states: Tuple[Sequence, ...]
    steps: Tuple[ChainStep, ...] = field(default=())
    init_attempts: int = 1

    @property
    def sample(self) -> Sequence:
        return self.states[-1]

    @property
    def accepted_count(self) -> int:
        return sum(s.accepted for s in self.steps)

    @property
    def overflow_count(self) -> int:
        return sum(s.length_exceeded for s in self.steps)

    @property
    def acceptance_rate(self) -> float:
        if not self.steps:
            return float("nan")
        return self.accepted_count / len(self.steps)


def log_accept_prob(lp_x: float, lp_y: float, log_qf: float, log_qr: float) -> float:
    """log α = min{0, log P(y) + log q(x|y) − log P(x) − log q(y|x)}."""
    if lp_x == LOG_ZERO and lp_y == LOG_ZERO:
        logger.warning("Both states have zero LM probability; accepting by convention")
        return LOG_ONE
    numerator = lp_y + log_qr
    denominator = lp_x + log_qf
    if numerator == LOG_ZERO:
        return LOG_ZERO
    if denominator == LOG_ZERO:
        return LOG_ONE
    return min(LOG_ONE, numerator - denominator)


def accept_prob(
    x: Sequence, y: Sequence, log_qf: float, log_qr: float, m: LanguageModel
) -> float:
    """MH acceptance probability using raw LM scores; the normalizer cancels."""
    return math.exp(log_accept_prob(lm_logprob(m, x), lm_logprob(m, y), log_qf, log_qr))


def initial_state(
    decoder: ConstrainedDecoder, rng: ChainRng, max_tokens: int, max_attempts: int
) -> Tuple[Sequence, int]:
    """w_0 by GCD from the empty prefix, redrawn while it overflows the cap."""
    for attempt in range(1, max_attempts + 1):
        try:
            return decoder.sample(Sequence(), rng.gcd, max_tokens).sequence, attempt
        except LengthExceeded:
            logger.debug("Initial GCD draw %d overflowed max_tokens=%d", attempt, max_tokens)
    raise LengthExceeded(max_tokens)


def run_chain(
    params: ChainParams,
    m: LanguageModel,
    g: Grammar,
    decoder: Optional[ConstrainedDecoder] = None,
) -> ChainTrace:
    decoder = decoder or decoder_for(m, g)
    kernel = ProposalKernel(params.kind, decoder, params.max_tokens)
    rng = ChainRng.from_seed(params.rng_seed)

    x, init_attempts = initial_state(decoder, rng, params.max_tokens, params.max_init_attempts)
    lp_x = lm_logprob(m, x)
    states: List[Sequence] = [x]
    steps: List[ChainStep] = []

    for t in range(1, params.k + 1):
        position = kernel.draw_position(x, rng.truncation)
        try:
            y = decoder.sample(x.prefix(position), rng.gcd, params.max_tokens).sequence
        except LengthExceeded:
            steps.append(
                ChainStep(t, None, position, LOG_ZERO, LOG_ZERO, 0.0, False, length_exceeded=True)
            )
            states.append(x)
            continue

        log_qf = kernel.log_q(x, y)
        log_qr = kernel.log_q(y, x)
        lp_y = lm_logprob(m, y)
        log_alpha = log_accept_prob(lp_x, lp_y, log_qf, log_qr)
        u = rng.bernoulli.random()
        accepted = (math.log(u) if u > 0.0 else LOG_ZERO) < log_alpha

        steps.append(ChainStep(t, y, position, log_qf, log_qr, math.exp(log_alpha), accepted))
        if accepted:
            x, lp_x = y, lp_y
        states.append(x)

    trace = ChainTrace(params, tuple(states), tuple(steps), init_attempts)
    if steps and trace.overflow_count > OVERFLOW_WARN_SHARE * len(steps):
        logger.warning(
            "Chain seed=%d: %d of %d proposals exceeded max_tokens=%d",
            params.rng_seed,
            trace.overflow_count,
            len(steps),
            params.max_tokens,
        )
    return trace
