"""Vocabulary, token sequences and next-token distributions."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Dict, FrozenSet, Iterable, List, Mapping, Tuple

import numpy as np

from src.core.errors import LengthExceeded, VocabularyError

EOS = "<eos>"

NORMALIZATION_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class Vocabulary:
    """Ordered token inventory; index len(tokens) is the end marker."""

    tokens: Tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "tokens", tuple(self.tokens))
        seen = set()
        for tok in self.tokens:
            if not isinstance(tok, str) or not tok:
                raise VocabularyError(f"Token {tok!r} must be a non-empty string")
            if tok == EOS:
                raise VocabularyError(f"'{EOS}' is reserved for the end marker")
            if tok in seen:
                raise VocabularyError(f"Duplicate token {tok!r}")
            seen.add(tok)

    @property
    def eos(self) -> int:
        return len(self.tokens)

    @property
    def size(self) -> int:
        """Number of outcomes, end marker included."""
        return len(self.tokens) + 1

    @cached_property
    def _index(self) -> Dict[str, int]:
        table = {tok: i for i, tok in enumerate(self.tokens)}
        table[EOS] = self.eos
        return table

    def index(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            raise VocabularyError(f"Unknown token {token!r}") from None

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def token(self, i: int) -> str:
        return EOS if i == self.eos else self.tokens[i]

    def text(self, seq: "Sequence") -> str:
        """Concatenated characters of the content tokens."""
        return "".join(self.tokens[i] for i in seq.tokens)

    def encode(self, tokens: Iterable[str], terminated: bool = True) -> "Sequence":
        return Sequence(tuple(self.index(t) for t in tokens), terminated)

    def decode(self, seq: "Sequence") -> List[str]:
        return [self.tokens[i] for i in seq.tokens]

    @cached_property
    def single_chars(self) -> FrozenSet[str]:
        return frozenset(t for t in self.tokens if len(t) == 1)

    def check_char_closure(self, terminals: Iterable[str]) -> None:
        """Every grammar terminal must be available as a length-1 token."""
        missing = sorted(set(terminals) - self.single_chars)
        if missing:
            raise VocabularyError(
                "Vocabulary is not char-closed; missing single-character tokens "
                + ", ".join(repr(c) for c in missing)
            )

    def tokenizations(self, text: str, max_tokens: int) -> List[Tuple[int, ...]]:
        """All ways to spell text as at most max_tokens content tokens."""
        memo: Dict[int, List[Tuple[int, ...]]] = {}

        def from_pos(pos: int) -> List[Tuple[int, ...]]:
            if pos == len(text):
                return [()]
            if pos in memo:
                return memo[pos]
            out: List[Tuple[int, ...]] = []
            for i, tok in enumerate(self.tokens):
                if text.startswith(tok, pos):
                    out.extend((i,) + rest for rest in from_pos(pos + len(tok)))
            memo[pos] = out
            return out

        return sorted(t for t in from_pos(0) if len(t) <= max_tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def __repr__(self) -> str:
        return f"Vocabulary({len(self.tokens)} tokens)"


@dataclass(frozen=True)
class Sequence:
    """Content-token indices plus whether the end marker was emitted."""

    tokens: Tuple[int, ...] = ()
    terminated: bool = False

    def __len__(self) -> int:
        return len(self.tokens)

    def prefix(self, i: int) -> "Sequence":
        return Sequence(self.tokens[:i], False)

    def append(self, token: int, max_tokens: int | None = None) -> "Sequence":
        if self.terminated:
            raise ValueError("Cannot extend a terminated sequence")
        if max_tokens is not None and len(self.tokens) >= max_tokens:
            raise LengthExceeded(max_tokens)
        return Sequence(self.tokens + (token,), False)

    def terminate(self) -> "Sequence":
        return Sequence(self.tokens, True)


def common_prefix_len(x: Sequence, y: Sequence) -> int:
    n = 0
    for a, b in zip(x.tokens, y.tokens):
        if a != b:
            break
        n += 1
    return n


@dataclass(frozen=True, eq=False)
class NextTokenDist:
    """Probability vector over (tokens + end marker)."""

    probs: np.ndarray

    def __post_init__(self) -> None:
        probs = np.array(self.probs, dtype=float)
        if probs.ndim != 1 or probs.size == 0:
            raise ValueError("NextTokenDist needs a non-empty 1-D vector")
        if not np.all(np.isfinite(probs)):
            raise ValueError("NextTokenDist entries must be finite")
        if np.any(probs < 0.0) or np.any(probs > 1.0 + NORMALIZATION_TOL):
            raise ValueError("NextTokenDist entries must lie in [0, 1]")
        total = float(probs.sum())
        if abs(total - 1.0) > NORMALIZATION_TOL:
            raise ValueError(f"NextTokenDist sums to {total!r}, not 1")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def from_mapping(cls, vocabulary: Vocabulary, probs: Mapping[str, float]) -> "NextTokenDist":
        vec = np.zeros(vocabulary.size)
        for tok, p in probs.items():
            vec[vocabulary.index(tok)] = p
        return cls(vec)

    @property
    def eos_prob(self) -> float:
        return float(self.probs[-1])

    def __getitem__(self, i: int) -> float:
        return float(self.probs[i])

    def __len__(self) -> int:
        return len(self.probs)
