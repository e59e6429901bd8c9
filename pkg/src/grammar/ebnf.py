"""
EBNF front end: compile the grammar dialect into a character-level BNF Grammar.

Dialect:
    name ::= body             one rule; the first rule defines the start symbol
    a b                       concatenation
    a | b                     alternation
    ( ... )                   grouping
    x*  x+  x?                repetition / option
    "lit"                     literal, escapes \\" \\\\ \\n \\t
    [a-z0-9]  [^-]            character class / negated class
    # ...                     comment to end of line

The text is parsed with a Lark meta-grammar; a Transformer turns the parse
tree into a small expression IR which _Compiler lowers to productions,
introducing fresh nonterminals for groups, classes and repetitions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, FrozenSet, List, Sequence, Tuple, Union

import lark
from lark.exceptions import UnexpectedEOF, UnexpectedInput, VisitError

from src.core.errors import EbnfSyntaxError, EmptyGrammar, GrammarError
from src.grammar.cfg import Grammar, Nonterminal, Production, Symbol, Terminal

logger = logging.getLogger(__name__)

# Printable ASCII plus newline and tab: the universe for negated classes.
ALPHABET: FrozenSet[str] = frozenset(chr(i) for i in range(32, 127)) | frozenset("\n\t")

_ESCAPES = {"n": "\n", "t": "\t", "\\": "\\", '"': '"'}
_CLASS_ESCAPES = {**_ESCAPES, "]": "]", "[": "[", "-": "-", "^": "^"}

_META_GRAMMAR = r"""
start: rule+
rule: RULE_HEAD alternation
alternation: sequence ("|" sequence)*
sequence: repeat*
?repeat: atom
       | atom "*" -> star
       | atom "+" -> plus
       | atom "?" -> optional
?atom: NAME -> ref
     | STRING -> literal
     | CHAR_CLASS -> char_class
     | "(" alternation ")"

RULE_HEAD.2: /[A-Za-z_][A-Za-z0-9_\-]*\s*::=/
NAME: /[A-Za-z_][A-Za-z0-9_\-]*/
STRING: /"(\\.|[^"\\])*"/
CHAR_CLASS: /\[(\\.|[^\]\\])+\]/
COMMENT: /#[^\n]*/

%import common.WS
%ignore WS
%ignore COMMENT
"""

_PARSER = lark.Lark(_META_GRAMMAR, parser="lalr", propagate_positions=True)


# ===== EXPRESSION IR =====

@dataclass(frozen=True)
class Ref:
    name: str


@dataclass(frozen=True)
class Literal:
    text: str


@dataclass(frozen=True)
class CharClass:
    chars: FrozenSet[str]


@dataclass(frozen=True)
class Alt:
    options: Tuple["Seq", ...]


@dataclass(frozen=True)
class Seq:
    items: Tuple["Expr", ...]


@dataclass(frozen=True)
class Repeat:
    kind: str  # "star" | "plus" | "optional"
    body: "Expr"


Expr = Union[Ref, Literal, CharClass, Alt, Seq, Repeat]


@dataclass(frozen=True)
class Rule:
    name: str
    body: Alt
    line: int
    column: int


# ===== LEXICAL HELPERS =====

def _decode_escapes(raw: str, table: Dict[str, str], token: lark.Token) -> List[str]:
    out: List[str] = []
    i = 0
    while i < len(raw):
        ch = raw[i]
        if ch == "\\":
            if i + 1 >= len(raw) or raw[i + 1] not in table:
                bad = raw[i : i + 2]
                raise EbnfSyntaxError(token.line, token.column, f"unknown escape {bad!r}")
            out.append(table[raw[i + 1]])
            i += 2
        else:
            out.append(ch)
            i += 1
    return out


def _parse_class(token: lark.Token) -> FrozenSet[str]:
    body = str(token)[1:-1]
    negate = body.startswith("^") and len(body) > 1
    if negate:
        body = body[1:]
    # keep escaped '-' distinct from range dashes
    units: List[Tuple[str, bool]] = []
    i = 0
    while i < len(body):
        if body[i] == "\\":
            decoded = _decode_escapes(body[i : i + 2], _CLASS_ESCAPES, token)
            units.append((decoded[0], True))
            i += 2
        else:
            units.append((body[i], False))
            i += 1
    members: set = set()
    j = 0
    while j < len(units):
        ch, _ = units[j]
        is_range = (
            j + 2 < len(units) and units[j + 1] == ("-", False)
        )
        if is_range:
            hi = units[j + 2][0]
            if ord(hi) < ord(ch):
                raise EbnfSyntaxError(token.line, token.column, f"empty range {ch}-{hi}")
            members.update(chr(c) for c in range(ord(ch), ord(hi) + 1))
            j += 3
        else:
            members.add(ch)
            j += 1
    if negate:
        return frozenset(ALPHABET - members)
    return frozenset(members)


class _ToIR(lark.Transformer):
    """Turn the Lark parse tree into the expression IR."""

    def start(self, rules):
        return list(rules)

    @lark.v_args(meta=True)
    def rule(self, meta, children):
        head, body = children
        name = str(head)[: str(head).index("::=")].strip()
        return Rule(name=name, body=body, line=meta.line, column=meta.column)

    def alternation(self, options):
        return Alt(tuple(options))

    def sequence(self, items):
        return Seq(tuple(items))

    def star(self, children):
        return Repeat("star", children[0])

    def plus(self, children):
        return Repeat("plus", children[0])

    def optional(self, children):
        return Repeat("optional", children[0])

    def ref(self, children):
        return Ref(str(children[0]))

    def literal(self, children):
        token = children[0]
        return Literal("".join(_decode_escapes(str(token)[1:-1], _ESCAPES, token)))

    def char_class(self, children):
        chars = _parse_class(children[0])
        if not chars:
            token = children[0]
            raise EbnfSyntaxError(token.line, token.column, "character class matches nothing")
        return CharClass(chars)


# ===== LOWERING =====

class _Compiler:
    """Lower EBNF expressions to BNF productions with fresh nonterminals."""

    def __init__(self) -> None:
        self.productions: List[Production] = []
        self._counter = 0
        self._class_cache: Dict[FrozenSet[str], str] = {}

    def _fresh(self, owner: str, kind: str) -> str:
        self._counter += 1
        # '.' cannot appear in user names, so fresh names never collide
        return f"{owner}.{kind}{self._counter}"

    def define(self, name: str, alternatives: Sequence[Tuple[Symbol, ...]]) -> None:
        for rhs in alternatives:
            self.productions.append(Production(name, rhs))

    def lower_alt(self, owner: str, alt: Alt) -> List[Tuple[Symbol, ...]]:
        return [self.lower_seq(owner, seq) for seq in alt.options]

    def lower_seq(self, owner: str, seq: Seq) -> Tuple[Symbol, ...]:
        out: List[Symbol] = []
        for item in seq.items:
            out.extend(self.lower(owner, item))
        return tuple(out)

    def lower(self, owner: str, expr: Expr) -> Tuple[Symbol, ...]:
        if isinstance(expr, Ref):
            return (Nonterminal(expr.name),)
        if isinstance(expr, Literal):
            return tuple(Terminal(c) for c in expr.text)
        if isinstance(expr, CharClass):
            if len(expr.chars) == 1:
                return (Terminal(next(iter(expr.chars))),)
            name = self._class_cache.get(expr.chars)
            if name is None:
                name = self._fresh(owner, "class")
                self._class_cache[expr.chars] = name
                self.define(name, [(Terminal(c),) for c in sorted(expr.chars)])
            return (Nonterminal(name),)
        if isinstance(expr, Seq):
            return self.lower_seq(owner, expr)
        if isinstance(expr, Alt):
            if len(expr.options) == 1:
                return self.lower_seq(owner, expr.options[0])
            name = self._fresh(owner, "group")
            self.define(name, self.lower_alt(owner, expr))
            return (Nonterminal(name),)
        if isinstance(expr, Repeat):
            body = self.lower(owner, expr.body)
            name = self._fresh(owner, expr.kind)
            me = Nonterminal(name)
            if expr.kind == "star":
                # X* → F, F → ε | X F
                self.define(name, [(), body + (me,)])
            elif expr.kind == "plus":
                self.define(name, [body, body + (me,)])
            else:
                self.define(name, [(), body])
            return (me,)
        raise GrammarError(f"Unsupported EBNF expression {expr!r}")


def _syntax_error(src: str, exc: UnexpectedInput) -> EbnfSyntaxError:
    line, col = getattr(exc, "line", -1), getattr(exc, "column", -1)
    if isinstance(exc, UnexpectedEOF) or line is None or line < 1:
        lines = src.split("\n")
        line, col = len(lines), len(lines[-1]) + 1
    detail = "unexpected end of input" if isinstance(exc, UnexpectedEOF) else "unexpected input"
    return EbnfSyntaxError(line, col, detail)


def _has_rules(src: str) -> bool:
    return any(line.strip() and not line.strip().startswith("#") for line in src.split("\n"))


def parse_ebnf(src: str) -> Grammar:
    """Parse EBNF text into a BNF Grammar whose first rule is the start symbol."""
    if not _has_rules(src):
        raise EmptyGrammar()

    try:
        tree = _PARSER.parse(src)
    except UnexpectedInput as exc:
        raise _syntax_error(src, exc) from exc

    try:
        rules: List[Rule] = _ToIR().transform(tree)
    except VisitError as exc:
        if isinstance(exc.orig_exc, GrammarError):
            raise exc.orig_exc from None
        raise

    seen: Dict[str, Rule] = {}
    for rule in rules:
        if rule.name in seen:
            raise EbnfSyntaxError(rule.line, rule.column, f"rule '{rule.name}' defined twice")
        seen[rule.name] = rule

    compiler = _Compiler()
    for rule in rules:
        compiler.define(rule.name, compiler.lower_alt(rule.name, rule.body))

    # Grammar() raises UndefinedNonterminal for dangling references
    full = Grammar(start=rules[0].name, productions=tuple(compiler.productions), source=src)
    reachable = full.reachable_from(frozenset({full.start}))
    kept = tuple(p for p in full.productions if p.lhs in reachable)
    if len(kept) < len(full.productions):
        logger.debug("Dropped %d unreachable productions", len(full.productions) - len(kept))
    return Grammar(start=full.start, productions=kept, source=src)


def escape_text(text: str) -> str:
    """Escape a string the way literals are written in the dialect."""
    return (
        text.replace("\\", "\\\\")
        .replace('"', '\\"')
        .replace("\n", "\\n")
        .replace("\t", "\\t")
    )


def unescape_text(text: str) -> str:
    out: List[str] = []
    i = 0
    while i < len(text):
        if text[i] == "\\" and i + 1 < len(text) and text[i + 1] in _ESCAPES:
            out.append(_ESCAPES[text[i + 1]])
            i += 2
        else:
            out.append(text[i])
            i += 1
    return "".join(out)
