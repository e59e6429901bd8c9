"""
Truncate-and-regenerate proposals.

A proposal keeps the first i tokens of the current sequence, with i drawn
from a truncation distribution over 0..|w|, and lets GCD complete the rest.
Its density marginalizes over every truncation point that could have
produced the candidate:

    q(y | x) = Σ_{i ≤ LCP(x, y)} p_pos^x(i) · P̃_GCD(y_{i+1..} | y_{1..i})
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Tuple

import numpy as np

from src.core.cache import LruDict
from src.core.logspace import log_sum, safe_log
from src.core.rng import ChainRng, categorical_cdf
from src.gcd.decoder import ConstrainedDecoder, GcdSample, decoder_for
from src.grammar.cfg import Grammar
from src.lm.models import LanguageModel
from src.lm.scoring import step_perplexity
from src.lm.vocabulary import Sequence, common_prefix_len

_TOL = 1e-9


class ProposalKind(str, Enum):
    UNIFORM = "uniform"
    PRIORITY = "priority"
    RESTART = "restart"

    @classmethod
    def parse(cls, name: str) -> "ProposalKind":
        key = name.strip().lower()
        if key.startswith("mcmc-"):
            key = key[len("mcmc-"):]
        if key == "prefix":
            return cls.UNIFORM
        try:
            return cls(key)
        except ValueError:
            raise ValueError(
                f"Unknown proposal kind {name!r}; expected uniform, priority or restart"
            ) from None


@dataclass(frozen=True, eq=False)
class TruncationDist:
    """probs[i] = chance of keeping the first i tokens, i = 0..|w|."""

    probs: np.ndarray

    def __post_init__(self) -> None:
        probs = np.array(self.probs, dtype=float)
        if abs(float(probs.sum()) - 1.0) > _TOL:
            raise ValueError("TruncationDist must sum to 1")
        if probs[0] <= 0.0:
            raise ValueError("TruncationDist must give the empty prefix positive mass")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    def __len__(self) -> int:
        return len(self.probs)

    @cached_property
    def cdf(self) -> np.ndarray:
        cdf = np.cumsum(self.probs)
        cdf.setflags(write=False)
        return cdf


def truncation_dist(kind: ProposalKind, w: Sequence, m: LanguageModel) -> TruncationDist:
    n = len(w)
    if kind is ProposalKind.UNIFORM:
        return TruncationDist(np.full(n + 1, 1.0 / (n + 1)))
    if kind is ProposalKind.PRIORITY:
        pp = np.array([step_perplexity(m.next_dist(w.prefix(i))) for i in range(n + 1)])
        return TruncationDist(pp / pp.sum())
    probs = np.zeros(n + 1)
    probs[0] = 1.0
    return TruncationDist(probs)


class ProposalKernel:
    """Proposal q(·|x) of one kind, bound to a decoder and length cap."""

    def __init__(self, kind: ProposalKind, decoder: ConstrainedDecoder, max_tokens: int) -> None:
        self.kind = kind
        self.decoder = decoder
        self.max_tokens = max_tokens
        self._truncations: LruDict = LruDict(decoder.cache_size)
        self._log_q: LruDict = LruDict(decoder.cache_size)

    def truncation(self, w: Sequence) -> TruncationDist:
        dist = self._truncations.get(w.tokens)
        if dist is None:
            dist = truncation_dist(self.kind, w, self.decoder.model)
            self._truncations[w.tokens] = dist
        return dist

    def draw_position(self, w: Sequence, rng: np.random.Generator) -> int:
        return categorical_cdf(rng, self.truncation(w).cdf)

    def propose(self, w: Sequence, rng: ChainRng) -> Tuple[GcdSample, int]:
        """Truncate w at a drawn position and GCD-complete.

        Propagates LengthExceeded from the completion.
        """
        i = self.draw_position(w, rng.truncation)
        return self.decoder.sample(w.prefix(i), rng.gcd, self.max_tokens), i

    def log_q(self, x: Sequence, y: Sequence) -> float:
        """log q(y | x); raises NotInLanguage if y is not a word of the grammar."""
        key = (x.tokens, y.tokens)
        cached = self._log_q.get(key)
        if cached is not None:
            return cached
        suffix = self.decoder.suffix_logprobs(y)
        if self.kind is ProposalKind.RESTART:
            value = float(suffix[0])
        else:
            p_pos = self.truncation(x).probs
            upper = min(common_prefix_len(x, y), len(x))
            value = log_sum(safe_log(p_pos[i]) + float(suffix[i]) for i in range(upper + 1))
        self._log_q[key] = value
        return value


def propose(
    w: Sequence,
    kind: ProposalKind,
    m: LanguageModel,
    g: Grammar,
    rng: ChainRng,
    max_tokens: int = 512,
) -> Tuple[Sequence, int]:
    """Draw (y, i): truncation point i ~ p_pos^w, y a GCD completion of w_{1..i}."""
    sample, i = ProposalKernel(kind, decoder_for(m, g), max_tokens).propose(w, rng)
    return sample.sequence, i


def proposal_logprob(
    x: Sequence, y: Sequence, kind: ProposalKind, m: LanguageModel, g: Grammar
) -> float:
    return ProposalKernel(kind, decoder_for(m, g), max_tokens=len(y)).log_q(x, y)
