"""
Incremental Earley recognizer over character-level grammars.

States are persistent snapshots: advancing never mutates the source state,
so a caller can branch from any prefix. A state holds only its own column
and a link to the state it was scanned from; earlier columns are reached
through the parent chain, so sibling branches share their common history
and a state costs one column however long its prefix is.

Empty rules are handled at prediction time (a nullable nonterminal is
predicted and skipped in the same step), so left recursion and ε need
no grammar rewriting.
"""

from __future__ import annotations

import logging
import threading
import weakref
from dataclasses import dataclass
from typing import Dict, FrozenSet, List, Optional, Tuple

from src.core.errors import DeadEnd
from src.grammar.cfg import Grammar, Terminal

logger = logging.getLogger(__name__)

# (production index, dot position, origin column)
Item = Tuple[int, int, int]


@dataclass(frozen=True)
class Column:
    """Earley item set after a given number of consumed characters."""

    items: FrozenSet[Item]
    scans: Dict[str, Tuple[Item, ...]]
    waiting: Dict[str, Tuple[Item, ...]]
    complete: bool


@dataclass(frozen=True, eq=False)
class RecognizerState:
    """Chart snapshot for a consumed character prefix.

    Only viable states are ever constructed; a failed extension raises
    DeadEnd instead of producing a state.
    """

    recognizer: "EarleyRecognizer"
    column: Column
    parent: Optional["RecognizerState"] = None
    char: str = ""
    consumed_len: int = 0

    @property
    def text(self) -> str:
        chars: List[str] = []
        state: RecognizerState = self
        while state.parent is not None:
            chars.append(state.char)
            state = state.parent
        return "".join(reversed(chars))

    @property
    def viable(self) -> bool:
        return True

    @property
    def complete(self) -> bool:
        return self.column.complete

    def step(self, char: str) -> Optional["RecognizerState"]:
        """Successor state for one more character, or None on a dead end."""
        return self.recognizer._scan(self, char)

    def follow(self, chars: str) -> Optional["RecognizerState"]:
        """Successor after consuming every character of chars, or None."""
        state: Optional[RecognizerState] = self
        for ch in chars:
            state = state.step(ch)
            if state is None:
                return None
        return state

    def allowed_chars(self) -> FrozenSet[str]:
        return frozenset(self.column.scans)

    def __repr__(self) -> str:
        return f"RecognizerState(text={self.text!r}, complete={self.complete})"


class _ColumnLookup:
    """Columns of a state's ancestors by position, walking parents once."""

    def __init__(self, state: RecognizerState) -> None:
        self._cursor: Optional[RecognizerState] = state
        self._columns: Dict[int, Column] = {}

    def __getitem__(self, pos: int) -> Column:
        column = self._columns.get(pos)
        while column is None:
            cursor = self._cursor
            if cursor is None or cursor.consumed_len < pos:
                raise IndexError(pos)
            self._columns[cursor.consumed_len] = cursor.column
            self._cursor = cursor.parent
            column = self._columns.get(pos)
        return column


class EarleyRecognizer:
    """Earley recognizer bound to one (pruned) grammar."""

    def __init__(self, grammar: Grammar) -> None:
        self.source_grammar = grammar
        self.grammar = grammar.pruned()
        g = self.grammar
        self._rhs = [p.rhs for p in g.productions]
        self._lhs = [p.lhs for p in g.productions]
        self._by_lhs = g.rules_by_lhs
        self._nullable = g.nullable
        self._start = g.start
        self._initial = RecognizerState(
            recognizer=self,
            column=self._close([(p, 0, 0) for p in self._by_lhs[g.start]], None, 0),
        )

    @property
    def initial(self) -> RecognizerState:
        return self._initial

    def _close(self, seed: List[Item], previous: Optional[RecognizerState], pos: int) -> Column:
        items = set(seed)
        agenda = list(seed)
        scans: Dict[str, List[Item]] = {}
        waiting: Dict[str, List[Item]] = {}
        complete = False
        chart = _ColumnLookup(previous) if previous is not None else None

        def add(item: Item) -> None:
            if item not in items:
                items.add(item)
                agenda.append(item)

        while agenda:
            item = agenda.pop()
            prod, dot, origin = item
            rhs = self._rhs[prod]
            if dot < len(rhs):
                symbol = rhs[dot]
                if isinstance(symbol, Terminal):
                    scans.setdefault(symbol.char, []).append(item)
                    continue
                name = symbol.name
                waiting.setdefault(name, []).append(item)
                for p in self._by_lhs[name]:
                    add((p, 0, pos))
                if name in self._nullable:
                    add((prod, dot + 1, origin))
                continue

            lhs = self._lhs[prod]
            if origin == 0 and lhs == self._start:
                complete = True
            if origin == pos:
                # ε-completion: parents here already skipped lhs as nullable
                continue
            for parent_prod, parent_dot, parent_origin in chart[origin].waiting.get(lhs, ()):
                add((parent_prod, parent_dot + 1, parent_origin))

        return Column(
            items=frozenset(items),
            scans={c: tuple(v) for c, v in scans.items()},
            waiting={n: tuple(v) for n, v in waiting.items()},
            complete=complete,
        )

    def _scan(self, state: RecognizerState, char: str) -> Optional[RecognizerState]:
        matched = state.column.scans.get(char)
        if not matched:
            return None
        seed = [(prod, dot + 1, origin) for prod, dot, origin in matched]
        pos = state.consumed_len + 1
        column = self._close(seed, state, pos)
        return RecognizerState(recognizer=self, column=column, parent=state, char=char, consumed_len=pos)


_RECOGNIZERS: "weakref.WeakKeyDictionary[Grammar, EarleyRecognizer]" = weakref.WeakKeyDictionary()
_LOCK = threading.Lock()


def recognizer_for(g: Grammar) -> EarleyRecognizer:
    with _LOCK:
        recognizer = _RECOGNIZERS.get(g)
        if recognizer is None:
            recognizer = EarleyRecognizer(g)
            _RECOGNIZERS[g] = recognizer
            logger.debug("Built recognizer for %r", g)
        return recognizer


def recognizer_init(g: Grammar) -> RecognizerState:
    """Empty-prefix state; raises EmptyLanguage when L(g) is empty."""
    return recognizer_for(g).initial


def advance(s: RecognizerState, c: str) -> RecognizerState:
    """Consume one character; raises DeadEnd if the prefix stops being viable."""
    nxt = s.step(c)
    if nxt is None:
        raise DeadEnd(s.text, c)
    return nxt


def recognize(g: Grammar, text: str) -> bool:
    """Membership test: text ∈ L(g)."""
    state = recognizer_init(g).follow(text)
    return state is not None and state.complete
