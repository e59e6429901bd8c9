"""Sequence log-probability and per-step perplexity."""

from __future__ import annotations

import math

import numpy as np
from scipy.special import entr

from src.core.logspace import LOG_ZERO, safe_log
from src.lm.models import LanguageModel
from src.lm.vocabulary import NextTokenDist, Sequence


def lm_logprob(m: LanguageModel, w: Sequence, start: int = 0) -> float:
    """log P(w) under m, end marker included.

    With start > 0 only the factors after w_1..w_start are summed, so
    lm_logprob(m, w) == prefix part + lm_logprob(m, w, start).
    """
    if not w.terminated:
        raise ValueError("lm_logprob needs a terminated sequence")
    total = 0.0
    for i in range(start, len(w.tokens)):
        total += safe_log(m.next_dist(w.prefix(i))[w.tokens[i]])
        if total == LOG_ZERO:
            return LOG_ZERO
    return total + safe_log(m.next_dist(w.prefix(len(w.tokens))).eos_prob)


def lm_prefix_logprob(m: LanguageModel, w: Sequence, end: int) -> float:
    """Σ log P(w_i | w_<i) for i < end (no end-marker factor)."""
    total = 0.0
    for i in range(end):
        total += safe_log(m.next_dist(w.prefix(i))[w.tokens[i]])
    return total


def step_perplexity(d: NextTokenDist) -> float:
    """exp of the natural-log entropy; 0·ln 0 counts as 0."""
    return math.exp(float(np.sum(entr(d.probs))))
