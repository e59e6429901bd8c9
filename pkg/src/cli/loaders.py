"""Turn a RunConfig into a grammar and a language model."""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Optional

from src.core.config import Config
from src.core.errors import ConfigError, VocabularyError
from src.grammar.cfg import Grammar
from src.grammar.earley import recognizer_for
from src.grammar.ebnf import parse_ebnf
from src.lm.models import LanguageModel, UniformLM, load_table_lm
from src.lm.ngram import load_corpus, train_ngram
from src.lm.remote import RemoteLM
from src.lm.vocabulary import Vocabulary
from src.cli.run_config import RunConfig

logger = logging.getLogger(__name__)


def load_grammar_file(path: Optional[Path]) -> Grammar:
    if path is None:
        raise ConfigError("--grammar is required")
    try:
        src = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"Cannot read grammar {path}: {exc}") from exc
    return parse_ebnf(src)


def load_vocab_file(path: Path) -> Vocabulary:
    try:
        tokens = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"Cannot read vocabulary {path}: {exc}") from exc
    if not isinstance(tokens, list):
        raise ConfigError(f"{path} must hold a JSON list of tokens")
    return Vocabulary(tuple(tokens))


def build_model(cfg: RunConfig, grammar: Grammar, engine: Config) -> LanguageModel:
    """Instantiate the model named by cfg.lm and check it covers the grammar."""
    terminals = recognizer_for(grammar).grammar.terminals
    scheme, target = cfg.lm_scheme, cfg.lm_target

    if scheme == "table":
        model: LanguageModel = load_table_lm(Path(target))
    elif scheme == "ngram":
        corpus = load_corpus(Path(target))
        model = train_ngram(corpus, cfg.ngram_order, cfg.ngram_alpha, extra_tokens=terminals)
    elif scheme == "uniform":
        vocab = load_vocab_file(cfg.vocab) if cfg.vocab else Vocabulary(tuple(sorted(terminals)))
        model = UniformLM(vocab)
    elif scheme == "remote":
        vocab = load_vocab_file(cfg.vocab) if cfg.vocab else Vocabulary(tuple(sorted(terminals)))
        model = RemoteLM(
            target,
            vocab,
            timeout_s=engine.remote.timeout_s,
            sum_tolerance=engine.remote.sum_tolerance,
        )
    else:
        raise ConfigError(f"Unknown lm scheme {scheme!r}")

    try:
        model.vocabulary.check_char_closure(terminals)
    except VocabularyError as exc:
        raise VocabularyError(f"{cfg.lm}: {exc}") from exc
    logger.info("Model %s over %d tokens", model.name, len(model.vocabulary))
    return model
