"""
Language-model contract and the table-driven / uniform implementations.

A model only has to answer next_dist(prefix); every algorithm downstream
(masking, scoring, proposals, oracles) is written against that call.
"""

from __future__ import annotations

import json
import logging
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Dict, Mapping, Tuple

import numpy as np

from src.core.errors import LmFormatError, VocabularyError
from src.lm.vocabulary import EOS, NORMALIZATION_TOL, NextTokenDist, Sequence, Vocabulary

logger = logging.getLogger(__name__)


class LanguageModel(ABC):
    """P(w_i | w_1..w_{i-1}) over a fixed vocabulary.

    Implementations must be deterministic: equal prefixes give equal
    distributions, and every prefix (grammatical or not) has one.
    """

    @property
    @abstractmethod
    def vocabulary(self) -> Vocabulary:
        ...

    @abstractmethod
    def next_dist(self, prefix: Sequence) -> NextTokenDist:
        ...

    @property
    def name(self) -> str:
        return type(self).__name__


class TableLM(LanguageModel):
    """Explicit per-context rows with longest-suffix backoff to a default row."""

    def __init__(
        self,
        vocabulary: Vocabulary,
        rows: Mapping[Tuple[int, ...], NextTokenDist],
        default: NextTokenDist,
        name: str = "table",
    ) -> None:
        for dist in list(rows.values()) + [default]:
            if len(dist) != vocabulary.size:
                raise LmFormatError(
                    f"Row has {len(dist)} entries, vocabulary needs {vocabulary.size}"
                )
        self._vocabulary = vocabulary
        self._rows: Dict[Tuple[int, ...], NextTokenDist] = dict(rows)
        self._default = default
        self._longest = max((len(c) for c in self._rows), default=0)
        self._name = name

    @property
    def vocabulary(self) -> Vocabulary:
        return self._vocabulary

    @property
    def name(self) -> str:
        return self._name

    def next_dist(self, prefix: Sequence) -> NextTokenDist:
        tokens = prefix.tokens
        row = self._rows.get(tokens)
        if row is not None:
            return row
        for length in range(min(self._longest, len(tokens) - 1), -1, -1):
            row = self._rows.get(tokens[len(tokens) - length :])
            if row is not None:
                return row
        return self._default

    @classmethod
    def flat(cls, vocabulary: Vocabulary, probs: Mapping[str, float], name: str = "flat") -> "TableLM":
        """Context-independent model: the same row at every step."""
        return cls(vocabulary, {}, NextTokenDist.from_mapping(vocabulary, probs), name=name)


class UniformLM(LanguageModel):
    """Every outcome (end marker included) equally likely at every step."""

    def __init__(self, vocabulary: Vocabulary) -> None:
        self._vocabulary = vocabulary
        self._dist = NextTokenDist(np.full(vocabulary.size, 1.0 / vocabulary.size))

    @property
    def vocabulary(self) -> Vocabulary:
        return self._vocabulary

    @property
    def name(self) -> str:
        return "uniform"

    def next_dist(self, prefix: Sequence) -> NextTokenDist:
        return self._dist


def _row(vocabulary: Vocabulary, probs: object, where: str) -> NextTokenDist:
    if not isinstance(probs, dict):
        raise LmFormatError(f"{where}: 'probs' must be an object mapping tokens to probabilities")
    try:
        vec = np.zeros(vocabulary.size)
        for tok, p in probs.items():
            vec[vocabulary.index(tok)] = float(p)
    except (VocabularyError, TypeError, ValueError) as exc:
        raise LmFormatError(f"{where}: {exc}") from exc
    total = float(vec.sum())
    if abs(total - 1.0) > NORMALIZATION_TOL:
        raise LmFormatError(f"{where}: probabilities sum to {total:.12g}, expected 1")
    try:
        return NextTokenDist(vec)
    except ValueError as exc:
        raise LmFormatError(f"{where}: {exc}") from exc


def parse_table_lm(doc: object, name: str = "table") -> TableLM:
    """Build a TableLM from the decoded JSON document."""
    if not isinstance(doc, dict):
        raise LmFormatError("Table LM must be a JSON object")
    if "tokens" not in doc or "default" not in doc:
        raise LmFormatError("Table LM needs 'tokens' and a mandatory 'default' row")
    try:
        vocabulary = Vocabulary(tuple(doc["tokens"]))
    except VocabularyError as exc:
        raise LmFormatError(str(exc)) from exc

    rows: Dict[Tuple[int, ...], NextTokenDist] = {}
    for n, entry in enumerate(doc.get("rows", [])):
        where = f"rows[{n}]"
        if not isinstance(entry, dict) or "context" not in entry:
            raise LmFormatError(f"{where}: needs 'context' and 'probs'")
        try:
            context = tuple(vocabulary.index(t) for t in entry["context"])
        except VocabularyError as exc:
            raise LmFormatError(f"{where}: {exc}") from exc
        if vocabulary.eos in context:
            raise LmFormatError(f"{where}: '{EOS}' cannot appear in a context")
        if context in rows:
            raise LmFormatError(f"{where}: duplicate context")
        rows[context] = _row(vocabulary, entry.get("probs"), where)

    default = _row(vocabulary, doc["default"], "default")
    logger.debug("Loaded table LM with %d rows over %d tokens", len(rows), len(vocabulary))
    return TableLM(vocabulary, rows, default, name=name)


def load_table_lm(path: Path) -> TableLM:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise LmFormatError(f"Cannot read table LM {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise LmFormatError(f"{path} is not valid JSON: {exc}") from exc
    return parse_table_lm(doc, name=path.stem)

