"""Grammar front end and prefix recognition."""

from src.grammar.cfg import Grammar, Nonterminal, Production, Terminal
from src.grammar.earley import (
    EarleyRecognizer,
    RecognizerState,
    advance,
    recognize,
    recognizer_for,
    recognizer_init,
)
from src.grammar.ebnf import escape_text, parse_ebnf, unescape_text
from src.grammar.enumerate import enumerate_language, format_language

__all__ = [
    "Grammar",
    "Nonterminal",
    "Production",
    "Terminal",
    "EarleyRecognizer",
    "RecognizerState",
    "advance",
    "recognize",
    "recognizer_for",
    "recognizer_init",
    "escape_text",
    "parse_ebnf",
    "unescape_text",
    "enumerate_language",
    "format_language",
]
