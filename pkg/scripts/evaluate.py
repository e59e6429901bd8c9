"""
KL sweep over the pinned fixture matrix.

For each fixture and proposal kind, runs `--runs` batches of `--chains`
seeded chains of length max(k), reuses intermediate states for every
smaller k, and writes mean KL-to-target with bootstrap CIs as CSV.
"""

from __future__ import annotations

import argparse
from dataclasses import replace
from pathlib import Path
from typing import Dict, List

from src.core.config import load_config
from src.core.report_writer import ReportWriter
from src.eval.exact import exact_target, exact_transition_matrix, k_step_distribution, tvd
from src.eval.fixtures import Fixture, fixture_matrix
from src.eval.kl import kl_convergence_report, kl_reduction_ratios
from src.gcd.decoder import decoder_for
from src.lm.vocabulary import Sequence
from src.mcmc.batch import run_chains
from src.mcmc.chain import ChainParams
from src.mcmc.proposals import ProposalKind

DEFAULT_KS = (1, 2, 5, 10)


def sweep_fixture(
    fx: Fixture,
    kind: ProposalKind,
    ks: List[int],
    n_runs: int,
    n_chains: int,
    seed: int,
) -> Dict[int, List[List[Sequence]]]:
    """runs_by_k[k][r] = states at step k of every chain in run r (k = 0 included).

    Each run is one lock-step batch of n_chains chains seeded with seed + r.
    """
    decoder = decoder_for(fx.model, fx.grammar)
    params = ChainParams(kind=kind, k=max(ks), max_tokens=fx.max_tokens)
    runs_by_k: Dict[int, List[List[Sequence]]] = {k: [] for k in [0, *ks]}
    for r in range(n_runs):
        batch = run_chains(replace(params, rng_seed=seed + r), n_chains, fx.model, fx.grammar, decoder=decoder)
        for k, runs in runs_by_k.items():
            runs.append(batch.states_at(k))
    return runs_by_k


def evaluate(out_csv: Path, ks: List[int], n_runs: int, n_chains: int, seed: int) -> None:
    engine = load_config()
    print("=" * 70)
    print("  GRAMMCMC fixture KL sweep")
    print("=" * 70)
    print(f"{'Fixture':<14} {'Kind':<9} {'KL k=0':<10} " + " ".join(f"{'k=' + str(k):<9}" for k in ks) + " exact TVD")
    print("-" * 70)

    with ReportWriter(out_csv) as writer:
        for fx in fixture_matrix():
            target = exact_target(fx.grammar, fx.model, fx.max_tokens, cap=engine.grammar.enumeration_cap)
            for kind in ProposalKind:
                runs_by_k = sweep_fixture(fx, kind, ks, n_runs, n_chains, seed)
                report = kl_convergence_report(
                    runs_by_k, fx.model, target,
                    resamples=engine.eval.bootstrap_resamples,
                    confidence=engine.eval.confidence,
                    seed=engine.eval.bootstrap_seed,
                )
                for row in report.rows:
                    writer.write(
                        benchmark=fx.name, method=f"mcmc-{kind.value}", kind=kind.value, k=row.k,
                        metric="kl_to_target", value=row.target_mean,
                        ci_low=row.target_ci_low, ci_high=row.target_ci_high, n_runs=row.n_runs,
                    )
                for k, ratio in kl_reduction_ratios(report).items():
                    writer.write(
                        benchmark=fx.name, method=f"mcmc-{kind.value}", kind=kind.value, k=k,
                        metric="kl_reduction_vs_gcd", value=ratio, n_runs=n_runs,
                    )

                T = exact_transition_matrix(kind, fx.grammar, fx.model, fx.max_tokens, target=target)
                exact = tvd(k_step_distribution(T, max(ks)), target.probs)
                cells = " ".join(f"{report.row(k).target_mean:<9.4f}" for k in ks)
                print(f"{fx.name:<14} {kind.value:<9} {report.row(0).target_mean:<10.4f} {cells} {exact:.1e}")

        rows = writer.rows_written
    print("=" * 70)
    print(f"📝 {rows} rows → {out_csv}")


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="KL-to-target sweep over the fixture matrix")
    parser.add_argument("--out", type=Path, default=Path("reports/fixture_kl.csv"), help="Report CSV path")
    parser.add_argument("--ks", type=int, nargs="+", default=list(DEFAULT_KS), help="Chain lengths to report")
    parser.add_argument("--runs", type=int, default=100, help="Runs per (fixture, kind)")
    parser.add_argument("--chains", type=int, default=100, help="Chains per run")
    parser.add_argument("--seed", type=int, default=42)
    args = parser.parse_args()

    evaluate(args.out, sorted(set(args.ks)), args.runs, args.chains, args.seed)
