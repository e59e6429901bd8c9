"""
CLI subcommands: sample, oracle, eval, corpus.

Chains fan out over a process pool; every chain derives its own random
stream from seed + index, so outputs do not depend on the pool size.
All file writing happens in the parent process, in index order.
"""

from __future__ import annotations

import logging
import os
from collections import Counter, defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence as Seq, Tuple

from src.cli.loaders import build_model, load_grammar_file
from src.cli.run_config import RunConfig
from src.core.config import Config
from src.core.errors import (
    ConfigError,
    Exhausted,
    InsufficientRuns,
    LengthExceeded,
    VerificationFailed,
)
from src.core.report_writer import ReportWriter
from src.core.rng import ChainRng, make_generator
from src.eval.exact import (
    detailed_balance_residual,
    dump_matrix,
    exact_target,
    exact_transition_matrix,
    proposal_total_mass,
    stationary_check,
)
from src.eval.fixtures import fixture_matrix
from src.eval.kl import geometric_mean_ratio, kl_convergence_report, kl_reduction_ratios
from src.gcd.decoder import decoder_for
from src.gcd.rejection import rejection_sample
from src.grammar.cfg import Grammar
from src.grammar.earley import recognize
from src.grammar.ebnf import escape_text
from src.grammar.enumerate import enumerate_language, format_language
from src.lm.models import LanguageModel
from src.mcmc.chain import ChainParams, initial_state, run_chain
from src.mcmc.proposals import ProposalKind
from src.mcmc.trace_io import read_traces, single_sample_records, trace_records, write_records

logger = logging.getLogger(__name__)

SAMPLES_FILE = "samples.txt"
TRACES_FILE = "traces.jsonl"

# corpus draws at most this many chains per requested seed
CORPUS_DRAW_FACTOR = 10


# ===== CHAIN FAN-OUT =====

@dataclass
class ChainOutcome:
    index: int
    tokens: Optional[List[str]]
    records: List[dict] = field(default_factory=list)
    error: Optional[str] = None
    accepted: int = 0
    steps: int = 0
    overflows: int = 0
    attempts: int = 0
    # masked decoding steps consulted, and tokens masked out over them
    gcd_draws: int = 0
    masked_out: int = 0
    vocab_size: int = 0


_WORKER: Dict[str, object] = {}


def _init_worker(cfg: RunConfig, grammar: Grammar, model: LanguageModel) -> None:
    _WORKER["cfg"] = cfg
    _WORKER["grammar"] = grammar
    _WORKER["model"] = model


def _run_one(index: int) -> ChainOutcome:
    cfg: RunConfig = _WORKER["cfg"]  # type: ignore[assignment]
    grammar: Grammar = _WORKER["grammar"]  # type: ignore[assignment]
    model: LanguageModel = _WORKER["model"]  # type: ignore[assignment]
    vocab = model.vocabulary
    seed = cfg.seed + index
    meta = {"method": cfg.method, "run": index, "benchmark": cfg.benchmark_name}

    if cfg.method == "rejection":
        try:
            result = rejection_sample(model, grammar, make_generator(seed), cfg.max_attempts, cfg.max_tokens)
        except Exhausted as exc:
            return ChainOutcome(index, None, error=str(exc))
        records = single_sample_records(result.sequence, vocab, attempts=result.attempts, **meta)
        return ChainOutcome(index, vocab.decode(result.sequence), records, attempts=result.attempts)

    decoder = decoder_for(model, grammar, cfg.cache_size)
    before = Counter(decoder.stats)

    def masking() -> Dict[str, int]:
        used = decoder.stats - before
        return {"gcd_draws": used["draws"], "masked_out": used["masked_out"], "vocab_size": vocab.size}

    try:
        if cfg.method == "gcd":
            seq, tries = initial_state(decoder, ChainRng.from_seed(seed), cfg.max_tokens, cfg.max_init_attempts)
            return ChainOutcome(
                index,
                vocab.decode(seq),
                single_sample_records(seq, vocab, attempts=tries, **meta),
                attempts=tries,
                **masking(),
            )

        params = ChainParams(
            kind=cfg.proposal_kind,
            k=cfg.k or 0,
            max_tokens=cfg.max_tokens,
            rng_seed=seed,
            max_init_attempts=cfg.max_init_attempts,
        )
        trace = run_chain(params, model, grammar, decoder=decoder)
        return ChainOutcome(
            index,
            vocab.decode(trace.sample),
            trace_records(trace, vocab, **meta),
            accepted=trace.accepted_count,
            steps=len(trace.steps),
            overflows=trace.overflow_count,
            attempts=trace.init_attempts,
            **masking(),
        )
    except LengthExceeded as exc:
        return ChainOutcome(index, None, error=str(exc), **masking())


def generate(
    cfg: RunConfig, grammar: Grammar, model: LanguageModel, start: int = 0, count: Optional[int] = None
) -> List[ChainOutcome]:
    """Run chains start .. start+count-1 (default all cfg.n_samples), results in index order."""
    n = cfg.n_samples if count is None else count
    indices = range(start, start + n)
    workers = min(cfg.workers or os.cpu_count() or 1, max(n, 1))
    if workers <= 1 or n <= 1:
        _init_worker(cfg, grammar, model)
        return [_run_one(i) for i in indices]
    chunk = max(1, n // (workers * 4))
    logger.info("Running %d chains on %d workers", n, workers)
    with ProcessPoolExecutor(
        max_workers=workers, initializer=_init_worker, initargs=(cfg, grammar, model)
    ) as pool:
        return list(pool.map(_run_one, indices, chunksize=chunk))


def _verify_reparse(grammar: Grammar, texts: Seq[str]) -> None:
    bad = [t for t in texts if not recognize(grammar, t)]
    if bad:
        raise VerificationFailed(f"{len(bad)} generated samples do not parse, first {bad[0]!r}")


def _print_chain_summary(cfg: RunConfig, outcomes: Seq[ChainOutcome]) -> None:
    ok = [o for o in outcomes if o.tokens is not None]
    print(f"✓ {len(ok)}/{len(outcomes)} chains produced a sample ({cfg.method})")
    if cfg.is_mcmc and ok:
        steps = sum(o.steps for o in ok)
        if steps:
            rate = sum(o.accepted for o in ok) / steps
            print(f"   acceptance rate {rate:.3f} over {steps} steps")
        overflows = sum(o.overflows for o in ok)
        if overflows:
            print(f"⚠️  {overflows} proposals exceeded max_tokens={cfg.max_tokens} (auto-rejected)")
    draws = sum(o.gcd_draws for o in outcomes)
    if draws:
        masked = sum(o.masked_out for o in outcomes)
        vocab_size = max(o.vocab_size for o in outcomes)
        print(
            f"   GCD masked {masked / draws:.2f} of {vocab_size} tokens per step "
            f"({masked} masked over {draws} decoding steps)"
        )
    if cfg.method == "rejection" and ok:
        attempts = sum(o.attempts for o in ok)
        print(f"   rejection acceptance rate {len(ok) / attempts:.4f} over {attempts} attempts")
    failed = [o for o in outcomes if o.tokens is None]
    if failed:
        print(f"⚠️  {len(failed)} chains failed, first: {failed[0].error}")


# ===== sample =====

def cmd_sample(cfg: RunConfig, engine: Config) -> int:
    if cfg.out_dir is None:
        raise ConfigError("sample needs --out-dir")
    grammar = load_grammar_file(cfg.grammar)
    model = build_model(cfg, grammar, engine)

    outcomes = generate(cfg, grammar, model)
    texts = ["".join(o.tokens) for o in outcomes if o.tokens is not None]
    _verify_reparse(grammar, texts)

    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with (out_dir / SAMPLES_FILE).open("w", encoding="utf-8", newline="\n") as fh:
        for text in texts:
            fh.write(escape_text(text) + "\n")
    with (out_dir / TRACES_FILE).open("w", encoding="utf-8", newline="\n") as fh:
        lines = sum(write_records(fh, o.records) for o in outcomes)

    _print_chain_summary(cfg, outcomes)
    print(f"📝 {len(texts)} samples → {out_dir / SAMPLES_FILE}")
    print(f"📝 {lines} trace lines → {out_dir / TRACES_FILE}")
    return 0 if len(texts) == len(outcomes) else Exhausted.exit_code


# ===== corpus =====

def cmd_corpus(cfg: RunConfig, engine: Config, out_dir: Path, extension: str) -> int:
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"Cannot create {out_dir}: {exc}") from exc
    if cfg.n_samples == 0:
        print(f"⚠️  n_samples is 0; {out_dir} left empty")
        return 0

    grammar = load_grammar_file(cfg.grammar)
    model = build_model(cfg, grammar, engine)

    # duplicates are replaced by further chains (indices continue past
    # n_samples) until n_samples unique seeds or the draw limit
    limit = CORPUS_DRAW_FACTOR * cfg.n_samples
    outcomes: List[ChainOutcome] = []
    seen = set()
    unique: List[str] = []
    while len(unique) < cfg.n_samples and len(outcomes) < limit:
        wanted = min(cfg.n_samples - len(unique), limit - len(outcomes))
        batch = generate(cfg, grammar, model, start=len(outcomes), count=wanted)
        outcomes.extend(batch)
        for text in ("".join(o.tokens) for o in batch if o.tokens is not None):
            if text not in seen:
                seen.add(text)
                unique.append(text)
        if all(o.tokens is None for o in batch):
            break
    texts = ["".join(o.tokens) for o in outcomes if o.tokens is not None]
    _verify_reparse(grammar, unique)

    ext = extension.lstrip(".")
    for n, text in enumerate(unique, start=1):
        name = f"seed-{n:04d}.{ext}" if ext else f"seed-{n:04d}"
        (out_dir / name).write_bytes(text.encode("utf-8"))

    _print_chain_summary(cfg, outcomes)
    print(f"✓ kept {len(unique)} seeds, dropped {len(texts) - len(unique)} duplicates → {out_dir}")
    if len(unique) < cfg.n_samples:
        print(f"⚠️  only {len(unique)} distinct seeds within {limit} chains ({cfg.n_samples} requested)")
    return 0 if len(texts) == len(outcomes) else Exhausted.exit_code


# ===== oracle =====

def _corrupt(alpha: float) -> float:
    return min(1.0, 2.0 * alpha)


def _oracle_subjects(cfg: RunConfig, engine: Config, use_fixtures: bool) -> List[Tuple[str, Grammar, LanguageModel, int]]:
    if use_fixtures or cfg.grammar is None:
        return [(f.name, f.grammar, f.model, f.max_tokens) for f in fixture_matrix()]
    grammar = load_grammar_file(cfg.grammar)
    model = build_model(cfg, grammar, engine)
    return [(cfg.benchmark_name or "grammar", grammar, model, cfg.max_tokens)]


def cmd_oracle(
    cfg: RunConfig,
    engine: Config,
    kinds: Seq[ProposalKind] = tuple(ProposalKind),
    use_fixtures: bool = False,
    report_path: Optional[Path] = None,
    dump_dir: Optional[Path] = None,
    corrupt_alpha: bool = False,
) -> int:
    """Exact stationarity, detailed balance, proposal mass and monotone TVD."""
    oc = engine.oracle
    acceptance: Optional[Callable[[float], float]] = _corrupt if corrupt_alpha else None
    writer = ReportWriter(Path(report_path)) if report_path else None
    failures: List[str] = []

    print("=" * 70)
    print("  Exact oracle verification")
    print("=" * 70)
    try:
        for name, grammar, model, max_tokens in _oracle_subjects(cfg, engine, use_fixtures):
            target = exact_target(grammar, model, max_tokens, cap=engine.grammar.enumeration_cap)
            for kind in kinds:
                T = exact_transition_matrix(
                    kind, grammar, model, max_tokens,
                    acceptance=acceptance, target=target, max_states=oc.max_states,
                )
                report = stationary_check(
                    T, target, tol=oc.stationary_tol, horizon=oc.horizon,
                    convergence_tol=oc.convergence_tol, monotone_slack=oc.monotone_slack,
                )
                balance = detailed_balance_residual(T, target)
                mass_error = max(
                    abs(sum(proposal_total_mass(kind, grammar, model, target, x)) - 1.0)
                    for x in target.support
                )
                checks = {
                    "stationary": report.stationary,
                    "monotone": report.monotone,
                    "converged": report.converged,
                    "balance": balance <= oc.balance_tol,
                    "mass": mass_error <= oc.mass_tol,
                }
                passed = all(checks.values())
                mark = "✓" if passed else "❌"
                head = ", ".join(f"{d:.4f}" for d in report.tvd_sequence[:3])
                print(
                    f"{mark} {name:<14} {kind.value:<9} states={len(target):<4} "
                    f"‖πT−π‖₁={report.residual:.2e} balance={balance:.2e} "
                    f"mass={mass_error:.1e} TVD=({head}, …) → {report.tvd_sequence[-1]:.1e}"
                )
                if not passed:
                    failures.append(f"{name}/{kind.value}: " + ", ".join(k for k, v in checks.items() if not v))
                if writer:
                    for metric, value in (
                        ("stationary_residual", report.residual),
                        ("detailed_balance", balance),
                        ("proposal_mass_error", mass_error),
                        ("tvd_k0", report.tvd_sequence[0]),
                        (f"tvd_k{len(report.tvd_sequence) - 1}", report.tvd_sequence[-1]),
                    ):
                        writer.write(benchmark=name, method="mcmc", kind=kind.value, k=0, metric=metric, value=value)
                if dump_dir:
                    dump_matrix(T, Path(dump_dir) / f"{name.replace('/', '_')}_{kind.value}.txt")
    finally:
        if writer:
            writer.close()

    print("=" * 70)
    if failures:
        for line in failures:
            print(f"❌ {line}")
        raise VerificationFailed(f"{len(failures)} oracle checks failed")
    print("✓ All oracle checks passed")
    return 0


# ===== eval =====

def _trace_files(run_dirs: Seq[Path]) -> List[Path]:
    files = []
    for d in run_dirs:
        d = Path(d)
        if d.is_file():
            files.append(d)
        elif (d / TRACES_FILE).exists():
            files.append(d / TRACES_FILE)
        else:
            files.extend(sorted(d.glob(f"*/{TRACES_FILE}")))
    return files


def cmd_eval(
    cfg: RunConfig,
    engine: Config,
    run_dirs: Seq[Path],
    out_csv: Path,
    with_exact: bool = False,
) -> int:
    """KL report per (benchmark, method, kind, k); each run directory is one run.

    A chain of length K contributes its state w_j to every k = j ≤ K.
    """
    files = _trace_files(run_dirs)
    if not files:
        raise InsufficientRuns(f"no {TRACES_FILE} under {', '.join(str(d) for d in run_dirs)}")

    grammar = load_grammar_file(cfg.grammar)
    model = build_model(cfg, grammar, engine)
    vocab = model.vocabulary
    target = exact_target(grammar, model, cfg.max_tokens, cap=engine.grammar.enumeration_cap) if with_exact else None

    # (benchmark, method, kind) -> k -> [samples of each run file]
    groups: Dict[Tuple[str, str, str], Dict[int, List[list]]] = defaultdict(lambda: defaultdict(list))
    for path in files:
        per_file: Dict[Tuple[str, str, str], Dict[int, list]] = defaultdict(lambda: defaultdict(list))
        for run in read_traces(path):
            for k, state in enumerate(run.states):
                per_file[(run.benchmark, run.method, run.kind)][k].append(vocab.encode(state))
        for key, by_k in per_file.items():
            for k, samples in by_k.items():
                groups[key][k].append(samples)

    ec = engine.eval
    ratios_by_slot: Dict[Tuple[str, str, int], List[float]] = defaultdict(list)
    print("=" * 70)
    with ReportWriter(Path(out_csv)) as writer:
        for (benchmark, method, kind), by_k in sorted(groups.items()):
            report = kl_convergence_report(
                by_k, model, target,
                resamples=ec.bootstrap_resamples, confidence=ec.confidence, seed=ec.bootstrap_seed,
            )
            for row in report.rows:
                writer.write(
                    benchmark=benchmark, method=method, kind=kind, k=row.k, metric="kl_to_lm",
                    value=row.mean, ci_low=row.ci_low, ci_high=row.ci_high, n_runs=row.n_runs,
                )
                if row.target_mean is not None:
                    writer.write(
                        benchmark=benchmark, method=method, kind=kind, k=row.k, metric="kl_to_target",
                        value=row.target_mean, ci_low=row.target_ci_low, ci_high=row.target_ci_high,
                        n_runs=row.n_runs,
                    )
            if 0 in by_k and len(report.rows) > 1:
                for k, ratio in kl_reduction_ratios(report).items():
                    writer.write(
                        benchmark=benchmark, method=method, kind=kind, k=k,
                        metric="kl_reduction_vs_gcd", value=ratio, n_runs=report.row(k).n_runs,
                    )
                    ratios_by_slot[(method, kind, k)].append(ratio)
            if len(report.rows) < 2:
                print(f"✓ {benchmark or '-'} {method} {kind or '-'}: KL={report.rows[0].mean:.4f}")
            else:
                mark, trend = ("✓", "decreasing") if report.decreasing() else ("⚠️ ", "not monotone")
                print(
                    f"{mark} {benchmark or '-'} {method} {kind or '-'}: "
                    f"KL {report.rows[0].mean:.4f} → {report.rows[-1].mean:.4f} over k ({trend})"
                )

        for (method, kind, k), ratios in sorted(ratios_by_slot.items()):
            writer.write(
                benchmark="geomean", method=method, kind=kind, k=k,
                metric="kl_reduction_vs_gcd", value=geometric_mean_ratio(ratios), n_runs=len(ratios),
            )
        rows = writer.rows_written
    print("=" * 70)
    print(f"📝 {rows} report rows → {out_csv}")
    return 0


# ===== enumerate =====

def cmd_enumerate(grammar_path: Path, max_chars: int, engine: Config, out_path: Optional[Path] = None) -> int:
    """Bounded language, one escaped string per line, to a file or stdout."""
    words = enumerate_language(load_grammar_file(grammar_path), max_chars, cap=engine.grammar.enumeration_cap)
    text = format_language(words)
    if out_path is None:
        print(text, end="")
        return 0
    Path(out_path).write_text(text, encoding="utf-8", newline="\n")
    print(f"📝 {len(words)} strings of length ≤ {max_chars} → {out_path}")
    return 0
