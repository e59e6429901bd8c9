"""Rejection-sampling baseline: draw from the raw LM, keep grammatical outputs."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from src.core.errors import Exhausted
from src.core.rng import categorical
from src.grammar.cfg import Grammar
from src.grammar.earley import RecognizerState, recognizer_for
from src.lm.models import LanguageModel
from src.lm.vocabulary import Sequence

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RejectionResult:
    sequence: Sequence
    attempts: int

    @property
    def acceptance_rate(self) -> float:
        return 1.0 / self.attempts


def _attempt(
    m: LanguageModel,
    initial: RecognizerState,
    rng: np.random.Generator,
    max_tokens: int,
) -> Optional[Sequence]:
    """One unconstrained draw; None if it falls outside L(g) or the cap.

    The draw is abandoned as soon as its prefix leaves the prefix
    language, since no continuation can bring it back.
    """
    vocab = m.vocabulary
    seq = Sequence()
    state = initial
    while True:
        t = categorical(rng, m.next_dist(seq).probs)
        if t == vocab.eos:
            return seq.terminate() if state.complete else None
        if len(seq) >= max_tokens:
            return None
        state = state.follow(vocab.tokens[t])
        if state is None:
            return None
        seq = seq.append(t)


def rejection_sample(
    m: LanguageModel,
    g: Grammar,
    rng: np.random.Generator,
    max_attempts: int,
    max_tokens: int,
) -> RejectionResult:
    if max_attempts < 1:
        raise ValueError("max_attempts must be >= 1")
    initial = recognizer_for(g).initial
    for attempt in range(1, max_attempts + 1):
        seq = _attempt(m, initial, rng, max_tokens)
        if seq is not None:
            logger.debug("Rejection sampling accepted after %d attempts", attempt)
            return RejectionResult(sequence=seq, attempts=attempt)
    raise Exhausted(max_attempts)


def acceptance_trials(
    m: LanguageModel,
    g: Grammar,
    rng: np.random.Generator,
    n_attempts: int,
    max_tokens: int,
) -> int:
    """Number of accepted draws among n_attempts independent attempts."""
    initial = recognizer_for(g).initial
    return sum(_attempt(m, initial, rng, max_tokens) is not None for _ in range(n_attempts))
