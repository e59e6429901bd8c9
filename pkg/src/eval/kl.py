"""Empirical KL measures and bootstrap confidence intervals."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence as Seq, Tuple

import numpy as np
from scipy.special import logsumexp
from scipy.stats import gmean

from src.core.errors import InsufficientRuns, ZeroModelMass
from src.core.logspace import LOG_ZERO
from src.core.rng import make_generator
from src.eval.exact import ExactTarget
from src.lm.models import LanguageModel
from src.lm.scoring import lm_logprob
from src.lm.vocabulary import Sequence


def _frequencies(samples: Iterable[Sequence]) -> Tuple[List[Sequence], np.ndarray]:
    counts = Counter(samples)
    if not counts:
        raise ValueError("KL needs at least one sample")
    support = sorted(counts, key=lambda w: w.tokens)
    freq = np.array([counts[w] for w in support], dtype=float)
    return support, freq / freq.sum()


def empirical_kl_to_lm(
    samples: Iterable[Sequence], m: LanguageModel, normalized: bool = True
) -> float:
    """Σ_w f(w)·ln(f(w)/P̂(w)) over the observed support.

    P̂ is the LM probability renormalized over the observed support; with
    normalized=False the raw P(w) is used instead, which shifts the value
    by the log of the observed LM mass.
    """
    support, f = _frequencies(samples)
    for w in support:
        if not w.terminated:
            raise ValueError("KL samples must be terminated sequences")
    log_p = np.array([lm_logprob(m, w) for w in support])
    for w, lp in zip(support, log_p):
        if lp == LOG_ZERO:
            raise ZeroModelMass(m.vocabulary.text(w))
    if normalized:
        log_p = log_p - logsumexp(log_p)
    return float(np.sum(f * (np.log(f) - log_p)))


def kl_to_target(samples: Iterable[Sequence], target: ExactTarget) -> float:
    """KL(f ‖ P^G) against the exact bounded-language target."""
    support, f = _frequencies(samples)
    index = target.index
    total = 0.0
    for w, fw in zip(support, f):
        j = index.get(w.tokens)
        if j is None or target.probs[j] <= 0.0:
            raise ZeroModelMass(" ".join(str(t) for t in w.tokens))
        total += fw * (math.log(fw) - math.log(target.probs[j]))
    return total


def bootstrap_ci(
    values: Seq[float],
    resamples: int = 1000,
    confidence: float = 0.95,
    seed: int = 0,
) -> Tuple[float, float, float]:
    """(mean, low, high) by the percentile bootstrap of the mean."""
    data = np.asarray(values, dtype=float)
    if data.size == 0:
        raise ValueError("bootstrap_ci needs values")
    mean = float(data.mean())
    rng = make_generator(seed)
    idx = rng.integers(0, data.size, size=(resamples, data.size))
    means = data[idx].mean(axis=1)
    tail = 100.0 * (1.0 - confidence) / 2.0
    low, high = np.percentile(means, [tail, 100.0 - tail])
    return mean, min(float(low), mean), max(float(high), mean)


@dataclass(frozen=True)
class KlRow:
    k: int
    mean: float
    ci_low: float
    ci_high: float
    n_runs: int
    target_mean: Optional[float] = None
    target_ci_low: Optional[float] = None
    target_ci_high: Optional[float] = None


@dataclass(frozen=True)
class KlReport:
    rows: Tuple[KlRow, ...]

    def row(self, k: int) -> KlRow:
        for r in self.rows:
            if r.k == k:
                return r
        raise KeyError(k)

    @property
    def ks(self) -> List[int]:
        return [r.k for r in self.rows]

    def decreasing(self, use_target: bool = False) -> bool:
        """True when the mean KL strictly decreases along increasing k."""
        means = [r.target_mean if use_target else r.mean for r in self.rows]
        if any(v is None for v in means):
            return False
        return all(b < a for a, b in zip(means, means[1:]))


def kl_convergence_report(
    runs_by_k: Mapping[int, Seq[Seq[Sequence]]],
    m: LanguageModel,
    target: Optional[ExactTarget] = None,
    resamples: int = 1000,
    confidence: float = 0.95,
    seed: int = 0,
) -> KlReport:
    """Per k: mean run-level KL with a percentile-bootstrap CI.

    runs_by_k[k] is a list of runs, each run being the samples it produced
    at step k.
    """
    rows = []
    for k in sorted(runs_by_k):
        runs = [list(run) for run in runs_by_k[k] if len(run) > 0]
        if len(runs) < 2:
            raise InsufficientRuns(f"k={k} has {len(runs)} non-empty runs, need >= 2")
        values = [empirical_kl_to_lm(run, m) for run in runs]
        mean, low, high = bootstrap_ci(values, resamples, confidence, seed)
        extra: Dict[str, float] = {}
        if target is not None:
            t_values = [kl_to_target(run, target) for run in runs]
            t_mean, t_low, t_high = bootstrap_ci(t_values, resamples, confidence, seed)
            extra = {"target_mean": t_mean, "target_ci_low": t_low, "target_ci_high": t_high}
        rows.append(KlRow(k=k, mean=mean, ci_low=low, ci_high=high, n_runs=len(runs), **extra))
    return KlReport(tuple(rows))


def kl_reduction_ratios(report: KlReport, baseline_k: int = 0) -> Dict[int, float]:
    """mean KL at the GCD baseline (k = 0) divided by mean KL at each later k."""
    base = report.row(baseline_k).mean
    ratios = {}
    for r in report.rows:
        if r.k == baseline_k:
            continue
        ratios[r.k] = math.inf if r.mean <= 0.0 else base / r.mean
    return ratios


def geometric_mean_ratio(ratios: Iterable[float]) -> float:
    """Geometric mean over fixtures, skipping infinite (zero-KL) ratios."""
    finite = [r for r in ratios if math.isfinite(r) and r > 0.0]
    if not finite:
        return math.nan
    return float(gmean(finite))
