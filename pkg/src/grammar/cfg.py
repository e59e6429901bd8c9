"""Character-level context-free grammar model.

A Grammar is a start symbol plus BNF productions whose terminals are
single characters. EBNF constructs are compiled away before a Grammar
is built (see ebnf.py), so everything downstream works on plain BNF.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Dict, FrozenSet, List, Tuple, Union

from src.core.errors import EmptyGrammar, EmptyLanguage, GrammarError, UndefinedNonterminal


@dataclass(frozen=True)
class Terminal:
    """A single character of the grammar alphabet."""

    char: str

    def __repr__(self) -> str:
        return repr(self.char)


@dataclass(frozen=True)
class Nonterminal:
    name: str

    def __repr__(self) -> str:
        return self.name


Symbol = Union[Terminal, Nonterminal]


@dataclass(frozen=True)
class Production:
    lhs: str
    rhs: Tuple[Symbol, ...]

    def __repr__(self) -> str:
        body = " ".join(repr(s) for s in self.rhs) or "ε"
        return f"{self.lhs} → {body}"


@dataclass(frozen=True, eq=False)
class Grammar:
    """Immutable BNF grammar G = (Σ, N, S, R) over single-character terminals.

    Identity-hashed so recognizers and decoders can be cached per grammar.
    """

    start: str
    productions: Tuple[Production, ...]
    source: str = ""

    def __post_init__(self) -> None:
        if not self.productions:
            raise EmptyGrammar()
        defined = {p.lhs for p in self.productions}
        if self.start not in defined:
            raise UndefinedNonterminal(self.start)
        for production in self.productions:
            for symbol in production.rhs:
                if isinstance(symbol, Nonterminal) and symbol.name not in defined:
                    raise UndefinedNonterminal(symbol.name)
                if isinstance(symbol, Terminal) and len(symbol.char) != 1:
                    raise GrammarError(f"Terminal {symbol.char!r} is not a single character")

    @cached_property
    def nonterminals(self) -> FrozenSet[str]:
        return frozenset(p.lhs for p in self.productions)

    @cached_property
    def terminals(self) -> FrozenSet[str]:
        return frozenset(
            s.char for p in self.productions for s in p.rhs if isinstance(s, Terminal)
        )

    @cached_property
    def rules_by_lhs(self) -> Dict[str, Tuple[int, ...]]:
        index: Dict[str, List[int]] = {}
        for i, production in enumerate(self.productions):
            index.setdefault(production.lhs, []).append(i)
        return {name: tuple(ids) for name, ids in index.items()}

    @cached_property
    def nullable(self) -> FrozenSet[str]:
        """Nonterminals that derive the empty string."""
        found: set = set()
        changed = True
        while changed:
            changed = False
            for p in self.productions:
                if p.lhs in found:
                    continue
                if all(isinstance(s, Nonterminal) and s.name in found for s in p.rhs):
                    found.add(p.lhs)
                    changed = True
        return frozenset(found)

    @cached_property
    def productive(self) -> FrozenSet[str]:
        """Nonterminals that derive at least one terminal string."""
        found: set = set()
        changed = True
        while changed:
            changed = False
            for p in self.productions:
                if p.lhs in found:
                    continue
                if all(isinstance(s, Terminal) or s.name in found for s in p.rhs):
                    found.add(p.lhs)
                    changed = True
        return frozenset(found)

    def reachable_from(self, roots: FrozenSet[str]) -> FrozenSet[str]:
        seen = set(roots)
        stack = list(roots)
        while stack:
            name = stack.pop()
            for i in self.rules_by_lhs.get(name, ()):
                for s in self.productions[i].rhs:
                    if isinstance(s, Nonterminal) and s.name not in seen:
                        seen.add(s.name)
                        stack.append(s.name)
        return frozenset(seen)

    @cached_property
    def is_empty_language(self) -> bool:
        return self.start not in self.productive

    def pruned(self) -> "Grammar":
        """Drop unproductive and unreachable productions.

        Raises EmptyLanguage if the start symbol itself is unproductive.
        """
        if self.is_empty_language:
            raise EmptyLanguage(self.start)
        productive = self.productive
        useful = tuple(
            p
            for p in self.productions
            if p.lhs in productive
            and all(isinstance(s, Terminal) or s.name in productive for s in p.rhs)
        )
        staged = Grammar(self.start, useful, self.source)
        reachable = staged.reachable_from(frozenset({self.start}))
        kept = tuple(p for p in useful if p.lhs in reachable)
        if len(kept) == len(self.productions):
            return self
        return Grammar(self.start, kept, self.source)

    def __repr__(self) -> str:
        return (
            f"Grammar(start={self.start!r}, productions={len(self.productions)}, "
            f"terminals={len(self.terminals)})"
        )
