"""
Grammar-constrained decoding (GCD).

At each step the raw next-token distribution is masked to the tokens whose
characters keep the decoded text inside the grammar's prefix language
(the end marker only when the text is a complete word) and renormalized.

Masked steps and recognizer states are memoized per token prefix, so
chains sharing a decoder revisit known prefixes without touching the
model or the recognizer again; scoring all truncation points of one
sequence is a single pass.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, Optional, Tuple

import numpy as np

from src.core.cache import DEFAULT_CACHE_SIZE, LruDict
from src.core.errors import MaskEmpty, NotInLanguage, ZeroMass
from src.core.logspace import LOG_ZERO, safe_log
from src.core.rng import categorical_cdf
from src.grammar.cfg import Grammar
from src.grammar.earley import RecognizerState, recognizer_for
from src.lm.models import LanguageModel
from src.lm.vocabulary import NextTokenDist, Sequence

logger = logging.getLogger(__name__)

_MISSING = object()


@dataclass(frozen=True, eq=False)
class MaskedStep:
    mask: np.ndarray
    dist: NextTokenDist
    raw: NextTokenDist
    # recognizer state after each content token (None where masked out)
    successors: Tuple[Optional[RecognizerState], ...]
    cdf: np.ndarray
    log_dist: Tuple[float, ...]
    log_raw: Tuple[float, ...]

    @property
    def mask_size(self) -> int:
        return int(self.mask.sum())


@dataclass(frozen=True)
class GcdSample:
    """A GCD completion of some prefix.

    Both scores cover only the sampled continuation (tokens after the
    prefix plus the end marker).
    """

    sequence: Sequence
    gcd_logprob: float
    lm_logprob: float


def build_masked_step(m: LanguageModel, s: RecognizerState, prefix: Sequence) -> MaskedStep:
    vocab = m.vocabulary
    raw = m.next_dist(prefix)
    mask = np.zeros(vocab.size, dtype=bool)
    successors = []
    # tokens sharing a leading string reuse its recognizer state
    reached: Dict[str, Optional[RecognizerState]] = {"": s}
    for i, tok in enumerate(vocab.tokens):
        nxt = _follow_shared(reached, tok)
        successors.append(nxt)
        mask[i] = nxt is not None
    mask[vocab.eos] = s.complete
    if not mask.any():
        raise MaskEmpty(s.text)
    masked = np.where(mask, raw.probs, 0.0)
    total = float(masked.sum())
    if total <= 0.0:
        raise ZeroMass(s.text)
    mask.setflags(write=False)
    dist = NextTokenDist(masked / total)
    cdf = np.cumsum(dist.probs)
    cdf.setflags(write=False)
    return MaskedStep(
        mask=mask,
        dist=dist,
        raw=raw,
        successors=tuple(successors),
        cdf=cdf,
        log_dist=tuple(safe_log(float(p)) for p in dist.probs),
        log_raw=tuple(safe_log(float(p)) for p in raw.probs),
    )


def _follow_shared(reached: Dict[str, Optional[RecognizerState]], tok: str) -> Optional[RecognizerState]:
    cut = len(tok)
    while tok[:cut] not in reached:
        cut -= 1
    state = reached[tok[:cut]]
    for end in range(cut + 1, len(tok) + 1):
        if state is not None:
            state = state.step(tok[end - 1])
        reached[tok[:end]] = state
    return state


class ConstrainedDecoder:
    """GCD sampler and scorer for one (model, grammar) pair.

    Recognizer states, masked steps, suffix scores and overflow masses are
    memoized per token prefix in LRU tables of cache_size entries each, so
    a decoder shared by many chains holds a bounded working set.
    """

    def __init__(
        self, model: LanguageModel, grammar: Grammar, cache_size: int = DEFAULT_CACHE_SIZE
    ) -> None:
        self.model = model
        self.grammar = grammar
        self.vocabulary = model.vocabulary
        self.recognizer = recognizer_for(grammar)
        self.vocabulary.check_char_closure(self.recognizer.grammar.terminals)
        self.cache_size = cache_size
        self._states: LruDict = LruDict(cache_size)
        self._steps: LruDict = LruDict(cache_size)
        self._suffix: LruDict = LruDict(cache_size)
        self._overflow: LruDict = LruDict(cache_size)
        self.stats: Counter = Counter()

    def cache_sizes(self) -> Dict[str, int]:
        return {
            "states": len(self._states),
            "steps": len(self._steps),
            "suffix": len(self._suffix),
            "overflow": len(self._overflow),
        }

    # ----- recognizer states -----

    def _state_or_none(self, tokens: Tuple[int, ...]) -> Optional[RecognizerState]:
        if not tokens:
            return self.recognizer.initial
        cached = self._states.get(tokens, _MISSING)
        if cached is not _MISSING:
            return cached
        # resume from the longest remembered prefix
        start = len(tokens) - 1
        while start > 0 and tokens[:start] not in self._states:
            start -= 1
        state = self._states[tokens[:start]] if start > 0 else self.recognizer.initial
        for j in range(start, len(tokens)):
            if state is not None:
                state = state.follow(self.vocabulary.tokens[tokens[j]])
            self._states[tokens[: j + 1]] = state
        return state

    def state_for(self, prefix: Sequence) -> RecognizerState:
        state = self._state_or_none(prefix.tokens)
        if state is None:
            raise NotInLanguage(self.vocabulary.text(prefix), "prefix cannot be completed")
        return state

    # ----- masked steps -----

    def step(self, prefix: Sequence) -> MaskedStep:
        return self._step_at(prefix.tokens, None)

    def _step_at(self, key: Tuple[int, ...], state: Optional[RecognizerState]) -> MaskedStep:
        cached = self._steps.get(key)
        if cached is not None:
            return cached
        if state is None:
            state = self.state_for(Sequence(key))
        step = build_masked_step(self.model, state, Sequence(key))
        self._steps[key] = step
        self.stats["steps_built"] += 1
        logger.debug("Masked step at %r: %d/%d valid", state, step.mask_size, self.vocabulary.size)
        return step

    def sample(self, prefix: Sequence, rng: np.random.Generator, max_tokens: int) -> GcdSample:
        """Complete prefix by masked sampling until the end marker.

        Raises LengthExceeded when a content token would be appended to a
        sequence that already holds max_tokens tokens.
        """
        seq = Sequence(prefix.tokens)
        state = self.state_for(seq)
        gcd_lp = 0.0
        lm_lp = 0.0
        eos = self.vocabulary.eos
        while True:
            step = self._step_at(seq.tokens, state)
            self.stats["draws"] += 1
            self.stats["masked_out"] += self.vocabulary.size - step.mask_size
            t = categorical_cdf(rng, step.cdf)
            gcd_lp += step.log_dist[t]
            lm_lp += step.log_raw[t]
            if t == eos:
                break
            seq = seq.append(t, max_tokens)
            state = step.successors[t]
        self.stats["samples"] += 1
        return GcdSample(sequence=seq.terminate(), gcd_logprob=gcd_lp, lm_logprob=lm_lp)

    # ----- scoring -----

    def suffix_logprobs(self, w: Sequence) -> np.ndarray:
        """a[i] = log P̃_GCD(w_{i+1..|w|}, end | w_1..w_i) for i = 0..|w|."""
        key = w.tokens
        cached = self._suffix.get(key)
        if cached is not None:
            return cached
        text = self.vocabulary.text(w)
        n = len(key)
        factors = np.empty(n + 1)
        state: Optional[RecognizerState] = self.recognizer.initial
        for j in range(n + 1):
            if state is None:
                raise NotInLanguage(text, f"token {j} leaves the prefix language")
            target = key[j] if j < n else self.vocabulary.eos
            try:
                step = self._step_at(key[:j], state)
            except ZeroMass:
                factors[j] = LOG_ZERO
                if j < n:
                    state = state.follow(self.vocabulary.tokens[target])
                continue
            if not step.mask[target]:
                detail = "not a complete word" if j == n else f"token {j + 1} is masked out"
                raise NotInLanguage(text, detail)
            factors[j] = step.log_dist[target]
            if j < n:
                state = step.successors[target]
        suffix = np.cumsum(factors[::-1])[::-1].copy()
        suffix.setflags(write=False)
        self._suffix[key] = suffix
        return suffix

    def continuation_logprob(self, w: Sequence, start: int) -> float:
        if not w.terminated:
            raise ValueError("gcd_continuation_logprob needs a terminated sequence")
        if not 0 <= start <= len(w):
            raise ValueError(f"start={start} outside 0..{len(w)}")
        return float(self.suffix_logprobs(w)[start])

    def overflow_logprob(self, prefix: Sequence, max_tokens: int) -> float:
        """log probability that GCD from prefix tries to exceed max_tokens.

        Exhaustive over the masked-step tree below prefix, so only usable
        on small vocabularies and caps.
        """

        def overflow(tokens: Tuple[int, ...]) -> float:
            key = (tokens, max_tokens)
            cached = self._overflow.get(key)
            if cached is not None:
                return cached
            step = self.step(Sequence(tokens))
            probs = step.dist.probs
            if len(tokens) >= max_tokens:
                mass = 1.0 - float(probs[-1])
            else:
                mass = sum(
                    float(probs[t]) * overflow(tokens + (t,))
                    for t in np.flatnonzero(probs[:-1] > 0.0)
                )
            self._overflow[key] = mass
            return mass

        self.state_for(prefix)
        return safe_log(max(overflow(prefix.tokens), 0.0))


@lru_cache(maxsize=32)
def decoder_for(m: LanguageModel, g: Grammar, cache_size: int = DEFAULT_CACHE_SIZE) -> ConstrainedDecoder:
    return ConstrainedDecoder(m, g, cache_size)


def masked_step(m: LanguageModel, s: RecognizerState, prefix: Sequence) -> MaskedStep:
    """One GCD step: mask tokens against s, renormalize m's distribution."""
    if s.text != m.vocabulary.text(prefix):
        raise ValueError(f"Recognizer state {s.text!r} does not match the prefix")
    return build_masked_step(m, s, prefix)


def gcd_sample(
    m: LanguageModel,
    g: Grammar,
    prefix: Sequence,
    rng: np.random.Generator,
    max_tokens: int,
) -> GcdSample:
    return decoder_for(m, g).sample(prefix, rng, max_tokens)


def gcd_continuation_logprob(m: LanguageModel, g: Grammar, w: Sequence, start: int) -> float:
    """Σ log P̃_GCD of w's tokens after position start, end marker included."""
    return decoder_for(m, g).continuation_logprob(w, start)
