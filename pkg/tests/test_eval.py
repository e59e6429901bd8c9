import math
import os
import tempfile
import unittest
from collections import Counter
from pathlib import Path

import numpy as np
from scipy.special import rel_entr

from src.core.errors import BudgetExceeded, DegenerateTarget, InsufficientRuns, ZeroModelMass
from src.eval.exact import (
    detailed_balance_residual,
    dump_matrix,
    exact_target,
    exact_transition_matrix,
    gcd_initial_distribution,
    k_step_distribution,
    proposal_total_mass,
    stationary_check,
    tvd,
)
from src.eval.fixtures import fixture, fixture_matrix
from src.eval.kl import (
    bootstrap_ci,
    empirical_kl_to_lm,
    geometric_mean_ratio,
    kl_convergence_report,
    kl_reduction_ratios,
    kl_to_target,
)
from src.gcd.decoder import decoder_for
from src.grammar.ebnf import parse_ebnf
from src.lm.models import TableLM, UniformLM
from src.lm.vocabulary import Sequence, Vocabulary
from src.mcmc.batch import run_chains
from src.mcmc.chain import ChainParams, run_chain
from src.mcmc.proposals import ProposalKind

SLOW = os.environ.get("GRAMMCMC_SLOW_TESTS") == "1"

G1_00 = Sequence((0, 0), True)
G1_11 = Sequence((1, 1), True)


def chain_states(fx, kind, k, n_chains, seed):
    """states[c][j] = w_j of chain c."""
    decoder = decoder_for(fx.model, fx.grammar)
    out = []
    for c in range(n_chains):
        params = ChainParams(kind=kind, k=k, max_tokens=fx.max_tokens, rng_seed=seed + c)
        out.append(run_chain(params, fx.model, fx.grammar, decoder=decoder).states)
    return out


def empirical(states, target):
    counts = Counter(w.tokens for w in states)
    return np.array([counts[w.tokens] for w in target.support], dtype=float) / len(states)


def batch_empirical(batch, k, target):
    counts = batch.counts_at(k)
    return np.array([counts[w.tokens] for w in target.support], dtype=float) / batch.n_chains


def exact_kl(law, target):
    return float(rel_entr(law, target.probs).sum())


def ci_width(row):
    return row.target_ci_high - row.target_ci_low


class ExactTargetTests(unittest.TestCase):
    def setUp(self) -> None:
        self.fx = fixture("g1", "m1")
        self.target = exact_target(self.fx.grammar, self.fx.model, self.fx.max_tokens)

    def test_g1_target(self):
        self.assertEqual(self.target.texts, ("00", "11"))
        self.assertAlmostEqual(self.target.normalizer, 0.053, places=12)
        self.assertAlmostEqual(self.target.prob_of(G1_00), 0.049 / 0.053, places=12)
        self.assertAlmostEqual(self.target.prob_of(G1_00), 0.9245, places=4)
        self.assertEqual(self.target.prob_of(Sequence((0,), True)), 0.0)

    def test_gcd_distortion(self):
        initial = gcd_initial_distribution(self.target, self.fx.model, self.fx.grammar)
        np.testing.assert_allclose(initial, [7 / 9, 2 / 9])

    def test_every_tokenization_is_a_state(self):
        g = parse_ebnf('s ::= "ab"')
        m = UniformLM(Vocabulary(("a", "b", "ab")))
        target = exact_target(g, m, max_tokens=2)
        self.assertEqual(sorted(w.tokens for w in target.support), [(0, 1), (2,)])
        self.assertEqual(exact_target(g, m, max_tokens=1).texts, ("ab",))

    def test_zero_probability_sequences_are_excluded(self):
        m = TableLM.flat(self.fx.model.vocabulary, {"0": 0.5, "<eos>": 0.5})
        target = exact_target(self.fx.grammar, m, 4)
        self.assertEqual(target.texts, ("00",))
        dead = TableLM.flat(self.fx.model.vocabulary, {"<eos>": 1.0})
        with self.assertRaises(DegenerateTarget):
            exact_target(self.fx.grammar, dead, 4)

    def test_budget(self):
        with self.assertRaises(BudgetExceeded):
            exact_transition_matrix(ProposalKind.UNIFORM, self.fx.grammar, self.fx.model, 4, max_states=1)


class TransitionMatrixTests(unittest.TestCase):
    def setUp(self) -> None:
        self.fx = fixture("g1", "m1")
        self.target = exact_target(self.fx.grammar, self.fx.model, self.fx.max_tokens)

    def test_restart_matrix_hand_values(self):
        T = exact_transition_matrix(ProposalKind.RESTART, self.fx.grammar, self.fx.model, 4, target=self.target)
        np.testing.assert_allclose(T.matrix, [[59 / 63, 4 / 63], [7 / 9, 2 / 9]], atol=1e-12)

    def test_restart_tvd_sequence(self):
        T = exact_transition_matrix(ProposalKind.RESTART, self.fx.grammar, self.fx.model, 4, target=self.target)
        report = stationary_check(T, self.target)
        np.testing.assert_allclose(report.tvd_sequence[:3], [0.1468, 0.0233, 0.0037], atol=5e-5)
        self.assertAlmostEqual(k_step_distribution(T, 1)[0], 0.9012, places=4)

    def test_rows_are_stochastic(self):
        for fx in fixture_matrix():
            target = exact_target(fx.grammar, fx.model, fx.max_tokens)
            for kind in ProposalKind:
                T = exact_transition_matrix(kind, fx.grammar, fx.model, fx.max_tokens, target=target)
                np.testing.assert_allclose(T.matrix.sum(axis=1), 1.0, atol=1e-12)
                self.assertTrue(np.all(T.matrix >= 0.0))

    def test_corrupted_acceptance_breaks_stationarity(self):
        T = exact_transition_matrix(
            ProposalKind.RESTART, self.fx.grammar, self.fx.model, 4,
            acceptance=lambda a: min(1.0, 2.0 * a), target=self.target,
        )
        self.assertFalse(stationary_check(T, self.target).stationary)
        self.assertGreater(detailed_balance_residual(T, self.target), 1e-3)

    def test_singleton_language(self):
        g = parse_ebnf('s ::= "a"')
        m = UniformLM(Vocabulary(("a",)))
        target = exact_target(g, m, 3)
        T = exact_transition_matrix(ProposalKind.PRIORITY, g, m, 3, target=target)
        self.assertTrue(stationary_check(T, target).passed)

    def test_dump_matrix(self):
        T = exact_transition_matrix(ProposalKind.UNIFORM, self.fx.grammar, self.fx.model, 4, target=self.target)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "sub" / "g1.txt"
            dump_matrix(T, path)
            lines = path.read_text(encoding="utf-8").splitlines()
        self.assertTrue(lines[0].startswith("#"))
        self.assertEqual(len(lines), 3)


class FixtureOracleTests(unittest.TestCase):
    """Exact checks over every fixture and proposal kind."""

    @classmethod
    def setUpClass(cls) -> None:
        cls.cases = []
        for fx in fixture_matrix():
            target = exact_target(fx.grammar, fx.model, fx.max_tokens)
            for kind in ProposalKind:
                T = exact_transition_matrix(kind, fx.grammar, fx.model, fx.max_tokens, target=target)
                cls.cases.append((fx, kind, target, T))

    def test_stationarity(self):
        for fx, kind, target, T in self.cases:
            with self.subTest(fixture=fx.name, kind=kind.value):
                pi = target.probs
                self.assertLessEqual(float(np.abs(pi @ T.matrix - pi).sum()), 1e-10)

    def test_monotone_convergence(self):
        for fx, kind, target, T in self.cases:
            with self.subTest(fixture=fx.name, kind=kind.value):
                report = stationary_check(T, target, horizon=200)
                self.assertTrue(report.monotone)
                self.assertLess(report.tvd_sequence[-1], 1e-6)
                self.assertTrue(report.passed)

    def test_detailed_balance(self):
        for fx, kind, target, T in self.cases:
            with self.subTest(fixture=fx.name, kind=kind.value):
                self.assertLessEqual(detailed_balance_residual(T, target), 1e-10)

    def test_proposal_mass_sums_to_one(self):
        for fx, kind, target, _ in self.cases:
            for x in target.support:
                with self.subTest(fixture=fx.name, kind=kind.value, x=x.tokens):
                    in_support, overflow = proposal_total_mass(kind, fx.grammar, fx.model, target, x)
                    self.assertAlmostEqual(in_support + overflow, 1.0, delta=1e-9)

    def test_uniform_hand_values(self):
        fx, _, target, _ = next(c for c in self.cases if c[0].name == "g1/m1")
        in_support, overflow = proposal_total_mass(ProposalKind.UNIFORM, fx.grammar, fx.model, target, G1_00)
        self.assertAlmostEqual(in_support, 1.0, places=12)
        self.assertEqual(overflow, 0.0)


class KlTests(unittest.TestCase):
    def setUp(self) -> None:
        self.fx = fixture("g1", "m1")
        self.samples = [G1_00] * 9 + [G1_11]

    def test_empirical_kl_hand_value(self):
        self.assertAlmostEqual(empirical_kl_to_lm(self.samples, self.fx.model), 0.0039, delta=1e-4)

    def test_unnormalized_variant_shifts_by_log_mass(self):
        normalized = empirical_kl_to_lm(self.samples, self.fx.model)
        raw = empirical_kl_to_lm(self.samples, self.fx.model, normalized=False)
        self.assertAlmostEqual(raw - normalized, -math.log(0.053), places=10)

    def test_single_point_support_is_zero(self):
        self.assertAlmostEqual(empirical_kl_to_lm([G1_00] * 5, self.fx.model), 0.0)

    def test_zero_model_mass(self):
        m = TableLM.flat(self.fx.model.vocabulary, {"0": 0.5, "<eos>": 0.5})
        with self.assertRaises(ZeroModelMass):
            empirical_kl_to_lm(self.samples, m)

    def test_kl_to_target_of_gcd_law(self):
        target = exact_target(self.fx.grammar, self.fx.model, 4)
        samples = [G1_00] * 7 + [G1_11] * 2
        self.assertAlmostEqual(kl_to_target(samples, target), 0.1055, delta=1e-4)

    def test_bootstrap(self):
        self.assertEqual(bootstrap_ci([1.0, 1.0, 1.0]), (1.0, 1.0, 1.0))
        mean, low, high = bootstrap_ci([0.1, 0.2, 0.3, 0.4], resamples=500, seed=3)
        self.assertAlmostEqual(mean, 0.25)
        self.assertLessEqual(low, mean)
        self.assertGreaterEqual(high, mean)
        self.assertEqual(bootstrap_ci([0.1, 0.9], seed=1), bootstrap_ci([0.1, 0.9], seed=1))

    def test_report_and_ratios(self):
        runs_by_k = {
            0: [[G1_00, G1_11], [G1_00, G1_11, G1_11]],
            1: [[G1_00] * 9 + [G1_11], [G1_00] * 8 + [G1_11]],
        }
        report = kl_convergence_report(runs_by_k, self.fx.model, resamples=200)
        self.assertEqual(report.ks, [0, 1])
        self.assertEqual(report.row(1).n_runs, 2)
        self.assertTrue(report.decreasing())
        ratio = kl_reduction_ratios(report)[1]
        self.assertAlmostEqual(ratio, report.row(0).mean / report.row(1).mean)

    def test_insufficient_runs(self):
        with self.assertRaises(InsufficientRuns):
            kl_convergence_report({1: [[G1_00], []]}, self.fx.model)

    def test_geometric_mean_ratio(self):
        self.assertAlmostEqual(geometric_mean_ratio([2.0, 8.0, math.inf]), 4.0)
        self.assertTrue(math.isnan(geometric_mean_ratio([math.inf])))


class SamplerOracleAgreementTests(unittest.TestCase):
    def test_k10_outputs_match_exact_distribution(self):
        n = 100_000 if SLOW else 20_000
        tol = 0.01 if SLOW else 0.03
        cases = fixture_matrix() if SLOW else (fixture("g1", "m1"), fixture("expr", "bigram"))
        for fx in cases:
            target = exact_target(fx.grammar, fx.model, fx.max_tokens)
            for kind in ProposalKind:
                with self.subTest(fixture=fx.name, kind=kind.value):
                    T = exact_transition_matrix(kind, fx.grammar, fx.model, fx.max_tokens, target=target)
                    batch = run_chains(ChainParams(kind, 10, fx.max_tokens, rng_seed=500), n, fx.model, fx.grammar)
                    self.assertLess(tvd(batch_empirical(batch, 10, target), k_step_distribution(T, 10)), tol)

    def test_single_chain_runner_matches_exact_distribution(self):
        fx = fixture("expr", "bigram")
        target = exact_target(fx.grammar, fx.model, fx.max_tokens)
        for kind in ProposalKind:
            with self.subTest(kind=kind.value):
                T = exact_transition_matrix(kind, fx.grammar, fx.model, fx.max_tokens, target=target)
                states = [s[10] for s in chain_states(fx, kind, 10, 3000, seed=500)]
                self.assertLess(tvd(empirical(states, target), k_step_distribution(T, 10)), 0.04)

    def test_gcd_kl_exceeds_k10_kl(self):
        fx = fixture("g1", "m1")
        target = exact_target(fx.grammar, fx.model, fx.max_tokens)
        n = 10_000 if SLOW else 3000
        chains = chain_states(fx, ProposalKind.RESTART, 10, n, seed=77)
        kl0 = kl_to_target([s[0] for s in chains], target)
        kl10 = kl_to_target([s[10] for s in chains], target)
        self.assertGreater(kl0, 0.05)
        self.assertLess(kl10, 0.02)


class KlTrendTests(unittest.TestCase):
    KS = [1, 2, 5, 10]

    def sweep(self, fx, kind, target, n_runs, n_chains):
        runs_by_k = {k: [] for k in [0, *self.KS]}
        for r in range(n_runs):
            params = ChainParams(kind, max(self.KS), fx.max_tokens, rng_seed=10_000 + r)
            batch = run_chains(params, n_chains, fx.model, fx.grammar)
            for k, runs in runs_by_k.items():
                runs.append(batch.states_at(k))
        return kl_convergence_report(runs_by_k, fx.model, target, resamples=500)

    def test_mean_kl_decreases_with_chain_length(self):
        n_runs, n_chains = (100, 100) if SLOW else (20, 400)
        fx = fixture("g1", "m1")
        target = exact_target(fx.grammar, fx.model, fx.max_tokens)
        for kind in ProposalKind:
            with self.subTest(kind=kind.value):
                report = self.sweep(fx, kind, target, n_runs, n_chains)
                means = [report.row(k).target_mean for k in [0, *self.KS]]
                self.assertGreater(means[0], means[1])
                self.assertGreater(report.row(1).target_mean, report.row(10).target_ci_high)
                if kind is not ProposalKind.RESTART:
                    # restart is within sampling noise of the target from k = 2 on
                    self.assertTrue(all(b < a for a, b in zip(means, means[1:])), means)

    @unittest.skipUnless(SLOW, "set GRAMMCMC_SLOW_TESTS=1")
    def test_trend_follows_exact_kl_on_every_fixture(self):
        # plug-in KL(f || P^G) carries the same small-sample bias at every k,
        # so mean gaps estimate the exact KL gaps between consecutive k
        for fx in fixture_matrix():
            target = exact_target(fx.grammar, fx.model, fx.max_tokens)
            for kind in ProposalKind:
                with self.subTest(fixture=fx.name, kind=kind.value):
                    T = exact_transition_matrix(kind, fx.grammar, fx.model, fx.max_tokens, target=target)
                    exact = {k: exact_kl(k_step_distribution(T, k), target) for k in [0, *self.KS]}
                    report = self.sweep(fx, kind, target, 100, 100)
                    for a, b in zip([0, *self.KS], self.KS):
                        if exact[a] - exact[b] > ci_width(report.row(a)) + ci_width(report.row(b)):
                            self.assertGreater(report.row(a).target_mean, report.row(b).target_mean, (a, b))
                    if exact[1] - exact[10] > 2 * (ci_width(report.row(1)) + ci_width(report.row(10))):
                        self.assertGreater(report.row(1).target_mean, report.row(10).target_ci_high)


if __name__ == "__main__":
    unittest.main()
