"""Error hierarchy for GRAMMCMC.

Every error carries the CLI exit code it maps to:
1 = configuration/input error, 2 = runtime budget or exhaustion,
3 = verification failure.
"""

from __future__ import annotations

from typing import Optional


class GrammcmcError(Exception):
    """Base class for all engine errors."""

    exit_code = 2


# ===== CONFIGURATION / INPUT (exit 1) =====

class ConfigError(GrammcmcError):
    exit_code = 1


class GrammarError(GrammcmcError):
    exit_code = 1


class EbnfSyntaxError(GrammarError):
    """Grammar text does not parse under the EBNF dialect."""

    def __init__(self, line: int, col: int, detail: str = "") -> None:
        self.line = line
        self.col = col
        self.detail = detail
        message = f"EBNF syntax error at line {line}, column {col}"
        if detail:
            message += f": {detail}"
        super().__init__(message)


class UndefinedNonterminal(GrammarError):
    def __init__(self, name: str) -> None:
        self.name = name
        super().__init__(f"Nonterminal '{name}' is referenced but has no rule")


class EmptyGrammar(GrammarError):
    def __init__(self) -> None:
        super().__init__("Grammar source defines no rules")


class EmptyLanguage(GrammarError):
    def __init__(self, start: str) -> None:
        self.start = start
        super().__init__(f"No terminal string is derivable from start symbol '{start}'")


class VocabularyError(GrammcmcError):
    exit_code = 1


class LmFormatError(GrammcmcError):
    exit_code = 1


class EmptyCorpus(LmFormatError):
    def __init__(self) -> None:
        super().__init__("N-gram training corpus is empty")


# ===== RUNTIME (exit 2) =====

class DeadEnd(GrammcmcError):
    """Extending the consumed prefix leaves the grammar's prefix language."""

    def __init__(self, prefix: str, char: str) -> None:
        self.prefix = prefix
        self.char = char
        super().__init__(f"Prefix {prefix!r} cannot be extended with {char!r}")


class BudgetExceeded(GrammcmcError):
    def __init__(self, what: str, cap: int) -> None:
        self.what = what
        self.cap = cap
        super().__init__(f"{what} exceeds the configured cap of {cap}")


class RemoteLmError(GrammcmcError):
    pass


class Transport(RemoteLmError):
    def __init__(self, cause: Exception) -> None:
        self.cause = cause
        super().__init__(f"Remote LM transport failure: {cause}")


class ProtocolViolation(RemoteLmError):
    def __init__(self, detail: str) -> None:
        self.detail = detail
        super().__init__(f"Remote LM protocol violation: {detail}")


class LmTimeout(RemoteLmError):
    def __init__(self, timeout_s: float) -> None:
        self.timeout_s = timeout_s
        super().__init__(f"Remote LM did not answer within {timeout_s:.1f}s")


class MaskEmpty(GrammcmcError):
    def __init__(self, prefix: str) -> None:
        self.prefix = prefix
        super().__init__(
            f"No token is valid after {prefix!r}; the vocabulary is not char-closed"
        )


class ZeroMass(GrammcmcError):
    def __init__(self, prefix: str) -> None:
        self.prefix = prefix
        super().__init__(f"Every valid token after {prefix!r} has LM probability 0")


class LengthExceeded(GrammcmcError):
    def __init__(self, max_tokens: int) -> None:
        self.max_tokens = max_tokens
        super().__init__(f"Sequence exceeded max_tokens={max_tokens} before end of sequence")


class NotInLanguage(GrammcmcError):
    def __init__(self, text: str, detail: Optional[str] = None) -> None:
        self.text = text
        message = f"Sequence {text!r} is not in the grammar's language"
        if detail:
            message += f" ({detail})"
        super().__init__(message)


class Exhausted(GrammcmcError):
    def __init__(self, max_attempts: int) -> None:
        self.max_attempts = max_attempts
        super().__init__(f"Rejection sampling found no valid sequence in {max_attempts} attempts")


class DegenerateTarget(GrammcmcError):
    def __init__(self) -> None:
        super().__init__("LM assigns zero probability to every sequence of the bounded language")


class ZeroModelMass(GrammcmcError):
    def __init__(self, text: str) -> None:
        self.text = text
        super().__init__(f"Observed sample {text!r} has zero model probability")


class InsufficientRuns(GrammcmcError):
    def __init__(self, detail: str) -> None:
        super().__init__(f"Not enough runs for a KL report: {detail}")


# ===== VERIFICATION (exit 3) =====

class VerificationFailed(GrammcmcError):
    exit_code = 3
