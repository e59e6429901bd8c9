"""
Pinned fixture matrix for exact-oracle checks.

Three toy grammars (two-word language, "x"*, balanced parentheses), each
paired with a flat table model and a bigram model trained on a 20-line
corpus. Files live under assets/fixtures.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Dict, Tuple

from src.grammar.cfg import Grammar
from src.grammar.ebnf import parse_ebnf
from src.lm.models import LanguageModel, load_table_lm
from src.lm.ngram import load_corpus, train_ngram

FIXTURE_DIR = Path(__file__).resolve().parent.parent.parent / "assets" / "fixtures"

# grammar name -> max_tokens used by every oracle on that grammar
GRAMMAR_CAPS: Dict[str, int] = {"g1": 4, "star": 5, "expr": 4}

LM_NAMES = ("m1", "bigram")


@dataclass(frozen=True, eq=False)
class Fixture:
    grammar_name: str
    lm_name: str
    grammar: Grammar
    model: LanguageModel
    max_tokens: int

    @property
    def name(self) -> str:
        return f"{self.grammar_name}/{self.lm_name}"


def load_grammar(path: Path) -> Grammar:
    return parse_ebnf(Path(path).read_text(encoding="utf-8"))


@lru_cache(maxsize=None)
def fixture_grammar(name: str) -> Grammar:
    return load_grammar(FIXTURE_DIR / f"{name}.ebnf")


@lru_cache(maxsize=None)
def fixture_model(grammar_name: str, lm_name: str) -> LanguageModel:
    if lm_name == "m1":
        return load_table_lm(FIXTURE_DIR / f"m1_{grammar_name}.json")
    if lm_name == "bigram":
        corpus = load_corpus(FIXTURE_DIR / f"{grammar_name}.txt")
        terminals = fixture_grammar(grammar_name).terminals
        return train_ngram(corpus, order=2, alpha=1.0, extra_tokens=terminals)
    raise KeyError(f"Unknown fixture LM {lm_name!r}")


def fixture(grammar_name: str, lm_name: str) -> Fixture:
    return Fixture(
        grammar_name=grammar_name,
        lm_name=lm_name,
        grammar=fixture_grammar(grammar_name),
        model=fixture_model(grammar_name, lm_name),
        max_tokens=GRAMMAR_CAPS[grammar_name],
    )


def fixture_matrix() -> Tuple[Fixture, ...]:
    return tuple(fixture(g, lm) for g in GRAMMAR_CAPS for lm in LM_NAMES)
