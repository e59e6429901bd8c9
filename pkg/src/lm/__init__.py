"""Language-model contract and desk-scale implementations."""

from src.lm.models import LanguageModel, TableLM, UniformLM, load_table_lm, parse_table_lm
from src.lm.ngram import NgramLM, load_corpus, train_ngram
from src.lm.remote import RemoteLM, remote_next_dist
from src.lm.scoring import lm_logprob, lm_prefix_logprob, step_perplexity
from src.lm.vocabulary import EOS, NextTokenDist, Sequence, Vocabulary, common_prefix_len

__all__ = [
    "LanguageModel",
    "TableLM",
    "UniformLM",
    "load_table_lm",
    "parse_table_lm",
    "NgramLM",
    "load_corpus",
    "train_ngram",
    "RemoteLM",
    "remote_next_dist",
    "lm_logprob",
    "lm_prefix_logprob",
    "step_perplexity",
    "EOS",
    "NextTokenDist",
    "Sequence",
    "Vocabulary",
    "common_prefix_len",
]
