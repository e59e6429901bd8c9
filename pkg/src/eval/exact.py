"""
Exact oracles on length-bounded languages.

Everything here enumerates: the target P^G over every tokenization of
every bounded word, the full MH transition matrix built from the same
proposal kernel the sampler uses, and matrix powers from the GCD initial
distribution. Only practical for small fixtures.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from src.core.errors import BudgetExceeded, DegenerateTarget
from src.core.logspace import LOG_ZERO
from src.gcd.decoder import decoder_for
from src.grammar.cfg import Grammar
from src.grammar.enumerate import DEFAULT_CAP, enumerate_language
from src.lm.models import LanguageModel
from src.lm.scoring import lm_logprob
from src.lm.vocabulary import Sequence
from src.mcmc.chain import log_accept_prob
from src.mcmc.proposals import ProposalKernel, ProposalKind

logger = logging.getLogger(__name__)

DEFAULT_MAX_STATES = 2000


@dataclass(frozen=True, eq=False)
class ExactTarget:
    """P^G over the bounded support; probs[j] = P(support[j]) / normalizer."""

    support: Tuple[Sequence, ...]
    texts: Tuple[str, ...]
    log_weights: np.ndarray
    probs: np.ndarray
    normalizer: float
    max_tokens: int

    @cached_property
    def index(self) -> Dict[Tuple[int, ...], int]:
        return {w.tokens: j for j, w in enumerate(self.support)}

    def prob_of(self, w: Sequence) -> float:
        j = self.index.get(w.tokens)
        return 0.0 if j is None else float(self.probs[j])

    def __len__(self) -> int:
        return len(self.support)


def exact_target(
    g: Grammar,
    m: LanguageModel,
    max_tokens: int,
    cap: int = DEFAULT_CAP,
) -> ExactTarget:
    """Enumerate every sequence of at most max_tokens tokens spelling a word of L(g).

    Sequences with zero LM probability are left out of the support.
    """
    vocab = m.vocabulary
    longest = max(len(t) for t in vocab.tokens)
    words = enumerate_language(g, max_tokens * longest, cap)

    support = []
    texts = []
    log_weights = []
    for word in words:
        for tokens in vocab.tokenizations(word, max_tokens):
            seq = Sequence(tokens, True)
            lp = lm_logprob(m, seq)
            if lp == LOG_ZERO:
                continue
            support.append(seq)
            texts.append(word)
            log_weights.append(lp)
            if len(support) > cap:
                raise BudgetExceeded("exact target support", cap)

    if not support:
        raise DegenerateTarget()

    lw = np.array(log_weights)
    log_c = float(logsumexp(lw))
    probs = np.exp(lw - log_c)
    probs = probs / probs.sum()
    logger.info("Exact target: %d sequences from %d words, C=%.6g", len(support), len(words), math.exp(log_c))
    return ExactTarget(
        support=tuple(support),
        texts=tuple(texts),
        log_weights=lw,
        probs=probs,
        normalizer=math.exp(log_c),
        max_tokens=max_tokens,
    )


def gcd_initial_distribution(target: ExactTarget, m: LanguageModel, g: Grammar) -> np.ndarray:
    """Law of w_0: P̃_GCD on the support, renormalized for redrawn overflows."""
    decoder = decoder_for(m, g)
    weights = np.array([math.exp(decoder.continuation_logprob(w, 0)) for w in target.support])
    return weights / weights.sum()


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    kind: ProposalKind
    matrix: np.ndarray
    target: ExactTarget
    initial: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return self.matrix.shape[0]


def exact_transition_matrix(
    kind: ProposalKind,
    g: Grammar,
    m: LanguageModel,
    max_tokens: int,
    acceptance: Optional[Callable[[float], float]] = None,
    target: Optional[ExactTarget] = None,
    max_states: int = DEFAULT_MAX_STATES,
) -> TransitionMatrix:
    """T[x, y] = q(y|x)·α(x, y) for y ≠ x; the diagonal keeps rejected mass.

    acceptance, when given, post-processes every α (used for negative
    controls that must break stationarity).
    """
    target = target or exact_target(g, m, max_tokens)
    n = len(target)
    if n > max_states:
        raise BudgetExceeded("transition matrix states", max_states)

    kernel = ProposalKernel(kind, decoder_for(m, g), max_tokens)
    support = target.support
    log_q = np.array([[kernel.log_q(x, y) for y in support] for x in support])
    lw = target.log_weights

    T = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i == j or log_q[i, j] == LOG_ZERO:
                continue
            alpha = math.exp(log_accept_prob(lw[i], lw[j], log_q[i, j], log_q[j, i]))
            if acceptance is not None:
                alpha = acceptance(alpha)
            T[i, j] = math.exp(log_q[i, j]) * alpha
        T[i, i] = max(0.0, 1.0 - T[i].sum())

    initial = gcd_initial_distribution(target, m, g)
    logger.debug("Built %dx%d transition matrix (%s)", n, n, kind.value)
    return TransitionMatrix(kind=kind, matrix=T, target=target, initial=initial)


def tvd(p: np.ndarray, q: np.ndarray) -> float:
    """Total variation distance: half the L1 distance."""
    return 0.5 * float(np.abs(np.asarray(p, dtype=float) - np.asarray(q, dtype=float)).sum())


@dataclass(frozen=True)
class StationaryReport:
    residual: float
    tol: float
    tvd_sequence: Tuple[float, ...]
    monotone: bool
    converged: bool

    @property
    def stationary(self) -> bool:
        return self.residual <= self.tol

    @property
    def passed(self) -> bool:
        return self.stationary and self.monotone and self.converged


def stationary_check(
    T: TransitionMatrix,
    target: ExactTarget,
    tol: float = 1e-10,
    initial: Optional[np.ndarray] = None,
    horizon: int = 200,
    convergence_tol: float = 1e-6,
    monotone_slack: float = 1e-12,
) -> StationaryReport:
    """‖πT − π‖₁ plus TVD(out_k, π) for k = 0..horizon by matrix powers."""
    pi = target.probs
    if T.matrix.shape != (len(pi), len(pi)):
        raise ValueError("Transition matrix and target disagree in size")
    residual = float(np.abs(pi @ T.matrix - pi).sum())

    if initial is None:
        initial = T.initial if T.initial is not None else np.full(len(pi), 1.0 / len(pi))
    out = np.asarray(initial, dtype=float)
    distances = [tvd(out, pi)]
    for _ in range(horizon):
        out = out @ T.matrix
        distances.append(tvd(out, pi))

    monotone = all(b <= a + monotone_slack for a, b in zip(distances, distances[1:]))
    converged = distances[-1] < convergence_tol
    return StationaryReport(residual, tol, tuple(distances), monotone, converged)


def k_step_distribution(T: TransitionMatrix, k: int, initial: Optional[np.ndarray] = None) -> np.ndarray:
    """Law of w_k: initial · T^k."""
    out = np.asarray(T.initial if initial is None else initial, dtype=float)
    return out @ np.linalg.matrix_power(T.matrix, k)


def detailed_balance_residual(T: TransitionMatrix, target: ExactTarget) -> float:
    """max over x ≠ y of |π(x)T(x,y) − π(y)T(y,x)|."""
    flow = target.probs[:, None] * T.matrix
    gap = np.abs(flow - flow.T)
    np.fill_diagonal(gap, 0.0)
    return float(gap.max()) if gap.size else 0.0


def proposal_total_mass(
    kind: ProposalKind,
    g: Grammar,
    m: LanguageModel,
    target: ExactTarget,
    x: Sequence,
) -> Tuple[float, float]:
    """(Σ_y∈support q(y|x), overflow mass); the two add up to one."""
    decoder = decoder_for(m, g)
    kernel = ProposalKernel(kind, decoder, target.max_tokens)
    in_support = float(sum(math.exp(kernel.log_q(x, y)) for y in target.support))
    p_pos = kernel.truncation(x).probs
    overflow = float(
        sum(
            p_pos[i] * math.exp(decoder.overflow_logprob(x.prefix(i), target.max_tokens))
            for i in range(len(p_pos))
            if p_pos[i] > 0.0
        )
    )
    return in_support, overflow


def format_matrix(T: TransitionMatrix) -> str:
    """Whitespace-separated dump, one row per line, header of escaped words."""
    header = " ".join(repr(t) for t in T.target.texts)
    rows = [" ".join(f"{v:.12g}" for v in row) for row in T.matrix]
    return "# " + header + "\n" + "\n".join(rows) + "\n"


def dump_matrix(T: TransitionMatrix, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_matrix(T), encoding="utf-8")
