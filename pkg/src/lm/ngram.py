"""Add-α smoothed n-gram model trained on a whitespace-tokenized corpus."""

from __future__ import annotations

import logging
from collections import Counter, defaultdict
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence as Seq, Tuple

import numpy as np

from src.core.errors import EmptyCorpus, LmFormatError, VocabularyError
from src.lm.models import LanguageModel
from src.lm.vocabulary import NextTokenDist, Sequence, Vocabulary

logger = logging.getLogger(__name__)

BOS = -1

# escapes a corpus token may carry, since bare whitespace separates tokens
_TOKEN_ESCAPES = {"s": " ", "n": "\n", "t": "\t", "\\": "\\"}


def _context(tokens: Tuple[int, ...], order: int) -> Tuple[int, ...]:
    need = order - 1
    if need == 0:
        return ()
    padded = (BOS,) * need + tokens
    return padded[len(padded) - need :]


class NgramLM(LanguageModel):
    """P(t | last n-1 tokens) = (count + α) / (context count + α·(|V|+1))."""

    def __init__(
        self,
        vocabulary: Vocabulary,
        order: int,
        alpha: float,
        counts: Dict[Tuple[int, ...], np.ndarray],
    ) -> None:
        self._vocabulary = vocabulary
        self.order = order
        self.alpha = alpha
        self._counts = counts
        self._cache: Dict[Tuple[int, ...], NextTokenDist] = {}

    @property
    def vocabulary(self) -> Vocabulary:
        return self._vocabulary

    @property
    def name(self) -> str:
        return f"ngram{self.order}"

    def next_dist(self, prefix: Sequence) -> NextTokenDist:
        ctx = _context(prefix.tokens, self.order)
        dist = self._cache.get(ctx)
        if dist is None:
            counts = self._counts.get(ctx)
            if counts is None:
                counts = np.zeros(self._vocabulary.size)
            smoothed = counts + self.alpha
            dist = NextTokenDist(smoothed / smoothed.sum())
            self._cache[ctx] = dist
        return dist


def train_ngram(
    corpus: Seq[Seq[str]],
    order: int,
    alpha: float,
    vocabulary: Optional[Vocabulary] = None,
    extra_tokens: Iterable[str] = (),
) -> NgramLM:
    """Count (n-1)-token contexts over the corpus, end marker at each line end.

    Without an explicit vocabulary, the sorted union of corpus tokens and
    extra_tokens is used.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    if not corpus:
        raise EmptyCorpus()

    if vocabulary is None:
        seen = {tok for line in corpus for tok in line} | set(extra_tokens)
        vocabulary = Vocabulary(tuple(sorted(seen)))

    counts: Dict[Tuple[int, ...], np.ndarray] = defaultdict(lambda: np.zeros(vocabulary.size))
    events = Counter()
    for n, line in enumerate(corpus):
        try:
            ids = tuple(vocabulary.index(tok) for tok in line)
        except VocabularyError as exc:
            raise LmFormatError(f"corpus line {n + 1}: {exc}") from exc
        for i, tok in enumerate(ids + (vocabulary.eos,)):
            counts[_context(ids[:i], order)][tok] += 1.0
            events["tokens"] += 1
        events["lines"] += 1

    logger.info(
        "Trained %d-gram model: %d lines, %d events, %d contexts",
        order,
        events["lines"],
        events["tokens"],
        len(counts),
    )
    return NgramLM(vocabulary, order, alpha, dict(counts))


def decode_token(raw: str) -> str:
    """Expand \\s \\n \\t and \\\\ in a corpus token; other backslashes stay."""
    out: List[str] = []
    i = 0
    while i < len(raw):
        if raw[i] == "\\" and i + 1 < len(raw) and raw[i + 1] in _TOKEN_ESCAPES:
            out.append(_TOKEN_ESCAPES[raw[i + 1]])
            i += 2
        else:
            out.append(raw[i])
            i += 1
    return "".join(out)


def load_corpus(path: Path) -> List[List[str]]:
    """One training sequence per non-blank line, tokens split on spaces.

    Tokens may spell whitespace with escapes (see decode_token).
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise LmFormatError(f"Cannot read corpus {path}: {exc}") from exc
    lines = [[decode_token(tok) for tok in line.split()] for line in text.splitlines() if line.strip()]
    if not lines:
        raise EmptyCorpus()
    return lines
