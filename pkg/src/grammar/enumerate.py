"""Bounded language enumeration.

Computes { u ∈ L(g) : |u| ≤ max_chars } as a least fixpoint over
per-nonterminal string sets: every nonterminal starts empty and each round
re-derives its set from its productions using the sets of the previous
round, keeping only strings within the length bound.
"""

from __future__ import annotations

import logging
from typing import Dict, Iterable, List, Set

from src.core.errors import BudgetExceeded
from src.grammar.cfg import Grammar, Symbol, Terminal
from src.grammar.ebnf import escape_text

logger = logging.getLogger(__name__)

DEFAULT_CAP = 100_000


def _concat(parts: List[Symbol], sets: Dict[str, Set[str]], max_chars: int) -> Set[str]:
    current = {""}
    for symbol in parts:
        if isinstance(symbol, Terminal):
            options: Iterable[str] = (symbol.char,)
        else:
            options = sets[symbol.name]
        current = {
            head + tail
            for head in current
            for tail in options
            if len(head) + len(tail) <= max_chars
        }
        if not current:
            break
    return current


def enumerate_language(g: Grammar, max_chars: int, cap: int = DEFAULT_CAP) -> List[str]:
    """Every word of L(g) with at most max_chars characters, sorted.

    Raises BudgetExceeded when any intermediate set grows past cap.
    """
    if max_chars < 0:
        raise ValueError("max_chars must be non-negative")

    sets: Dict[str, Set[str]] = {name: set() for name in g.nonterminals}
    rounds = 0
    changed = True
    while changed:
        changed = False
        rounds += 1
        for production in g.productions:
            derived = _concat(list(production.rhs), sets, max_chars)
            target = sets[production.lhs]
            before = len(target)
            target |= derived
            if len(target) > cap:
                raise BudgetExceeded(f"language of '{production.lhs}' within {max_chars} chars", cap)
            if len(target) != before:
                changed = True

    words = sorted(sets[g.start])
    logger.debug("Enumerated %d words (≤ %d chars) in %d rounds", len(words), max_chars, rounds)
    return words


def format_language(words: Iterable[str]) -> str:
    """One escaped word per line, as written in grammar literals."""
    return "".join(escape_text(w) + "\n" for w in words)
