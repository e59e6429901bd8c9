import math
import os
import pickle
import unittest
from pathlib import Path

import numpy as np

from src.core.cache import LruDict
from src.core.errors import Exhausted, LengthExceeded, MaskEmpty, NotInLanguage, VocabularyError, ZeroMass
from src.core.rng import make_generator
from src.eval.fixtures import fixture, fixture_grammar, load_grammar
from src.gcd.decoder import ConstrainedDecoder, decoder_for, gcd_continuation_logprob, gcd_sample, masked_step
from src.gcd.rejection import acceptance_trials, rejection_sample
from src.grammar.earley import recognize, recognizer_for, recognizer_init
from src.grammar.ebnf import parse_ebnf
from src.lm.models import TableLM
from src.lm.ngram import load_corpus, train_ngram
from src.lm.scoring import lm_logprob
from src.lm.vocabulary import Sequence, Vocabulary
from src.mcmc.chain import ChainParams, run_chain
from src.mcmc.proposals import ProposalKind

SLOW = os.environ.get("GRAMMCMC_SLOW_TESTS") == "1"
ASSETS = Path(__file__).resolve().parents[1] / "assets"


class MaskedStepTests(unittest.TestCase):
    def setUp(self) -> None:
        self.fx = fixture("g1", "m1")
        self.vocab = self.fx.model.vocabulary

    def test_first_step_renormalizes_content_tokens(self):
        step = masked_step(self.fx.model, recognizer_init(self.fx.grammar), Sequence())
        np.testing.assert_allclose(step.dist.probs, [7 / 9, 2 / 9, 0.0])
        self.assertEqual(step.mask_size, 2)

    def test_complete_word_only_allows_end_marker(self):
        decoder = decoder_for(self.fx.model, self.fx.grammar)
        step = decoder.step(Sequence((0, 0)))
        np.testing.assert_allclose(step.dist.probs, [0.0, 0.0, 1.0])

    def test_state_must_match_prefix(self):
        with self.assertRaises(ValueError):
            masked_step(self.fx.model, recognizer_init(self.fx.grammar), Sequence((0,)))

    def test_zero_mass_after_mask(self):
        m = TableLM.flat(self.vocab, {"1": 0.5, "<eos>": 0.5})
        decoder = ConstrainedDecoder(m, self.fx.grammar)
        with self.assertRaises(ZeroMass):
            decoder.step(Sequence((0,)))

    def test_mask_empty_when_no_token_fits(self):
        g = parse_ebnf('s ::= "ab"')
        vocab = Vocabulary(("b", "c"))
        m = TableLM.flat(vocab, {"b": 0.5, "<eos>": 0.5})
        with self.assertRaises(MaskEmpty):
            masked_step(m, recognizer_init(g), Sequence())
        with self.assertRaises(VocabularyError):
            ConstrainedDecoder(m, g)


class GcdSamplingTests(unittest.TestCase):
    def setUp(self) -> None:
        self.fx = fixture("g1", "m1")
        self.vocab = self.fx.model.vocabulary

    def test_gcd_frequency_of_00(self):
        rng = make_generator(7)
        n = 20000 if SLOW else 4000
        hits = 0
        for _ in range(n):
            s = gcd_sample(self.fx.model, self.fx.grammar, Sequence(), rng, self.fx.max_tokens)
            hits += self.vocab.text(s.sequence) == "00"
        self.assertAlmostEqual(hits / n, 7 / 9, delta=0.03)

    def test_sample_scores(self):
        rng = make_generator(3)
        s = gcd_sample(self.fx.model, self.fx.grammar, Sequence((1,)), rng, self.fx.max_tokens)
        self.assertEqual(s.sequence.tokens, (1, 1))
        self.assertTrue(s.sequence.terminated)
        self.assertAlmostEqual(s.gcd_logprob, 0.0)
        self.assertAlmostEqual(s.lm_logprob, math.log(0.2) + math.log(0.1))

    def test_samples_always_parse(self):
        for grammar_name in ("g1", "star", "expr"):
            for lm_name in ("m1", "bigram"):
                fx = fixture(grammar_name, lm_name)
                decoder = decoder_for(fx.model, fx.grammar)
                rng = make_generator(11)
                for _ in range(200):
                    try:
                        s = decoder.sample(Sequence(), rng, fx.max_tokens)
                    except LengthExceeded:
                        continue
                    self.assertLessEqual(len(s.sequence), fx.max_tokens)
                    self.assertTrue(recognize(fx.grammar, fx.model.vocabulary.text(s.sequence)))

    def test_length_exceeded_on_unbounded_grammar(self):
        fx = fixture("star", "m1")
        rng = make_generator(0)
        seen_overflow = False
        for _ in range(200):
            try:
                gcd_sample(fx.model, fx.grammar, Sequence(), rng, 1)
            except LengthExceeded as exc:
                self.assertEqual(exc.max_tokens, 1)
                seen_overflow = True
        self.assertTrue(seen_overflow)

    def test_prefix_outside_language(self):
        with self.assertRaises(NotInLanguage):
            gcd_sample(self.fx.model, self.fx.grammar, Sequence((0, 1)), make_generator(0), 4)


class GcdScoringTests(unittest.TestCase):
    def setUp(self) -> None:
        self.fx = fixture("g1", "m1")
        self.decoder = decoder_for(self.fx.model, self.fx.grammar)

    def test_continuation_logprob(self):
        w = Sequence((0, 0), True)
        self.assertAlmostEqual(gcd_continuation_logprob(self.fx.model, self.fx.grammar, w, 0), math.log(7 / 9))
        self.assertAlmostEqual(gcd_continuation_logprob(self.fx.model, self.fx.grammar, w, 1), 0.0)
        self.assertAlmostEqual(gcd_continuation_logprob(self.fx.model, self.fx.grammar, w, 2), 0.0)

    def test_suffix_array_is_cumulative(self):
        fx = fixture("expr", "m1")
        decoder = decoder_for(fx.model, fx.grammar)
        w = fx.model.vocabulary.encode(["(", ")", "(", ")"])
        suffix = decoder.suffix_logprobs(w)
        self.assertEqual(len(suffix), 5)
        self.assertTrue(np.all(np.diff(suffix) >= -1e-12))
        self.assertLess(suffix[0], 0.0)

    def test_scoring_rejects_non_words(self):
        with self.assertRaises(NotInLanguage):
            self.decoder.continuation_logprob(Sequence((0,), True), 0)
        with self.assertRaises(NotInLanguage):
            self.decoder.continuation_logprob(Sequence((0, 1), True), 0)
        with self.assertRaises(ValueError):
            self.decoder.continuation_logprob(Sequence((0, 0)), 0)

    def test_overflow_probability(self):
        fx = fixture("star", "m1")
        decoder = decoder_for(fx.model, fx.grammar)
        # GCD on x* keeps emitting x with 0.7 per step
        self.assertAlmostEqual(math.exp(decoder.overflow_logprob(Sequence(), 2)), 0.7 ** 3)
        self.assertEqual(self.decoder.overflow_logprob(Sequence(), 4), float("-inf"))


class RejectionTests(unittest.TestCase):
    def setUp(self) -> None:
        self.fx = fixture("g1", "m1")

    def test_acceptance_rate_matches_grammar_mass(self):
        n = 10000 if SLOW else 4000
        accepted = acceptance_trials(self.fx.model, self.fx.grammar, make_generator(5), n, self.fx.max_tokens)
        self.assertAlmostEqual(accepted / n, 0.053, delta=0.007 if SLOW else 0.012)

    def test_rejection_sample_returns_word(self):
        result = rejection_sample(self.fx.model, self.fx.grammar, make_generator(1), 1000, self.fx.max_tokens)
        self.assertIn(self.fx.model.vocabulary.text(result.sequence), {"00", "11"})
        self.assertGreaterEqual(result.attempts, 1)
        self.assertAlmostEqual(result.acceptance_rate, 1.0 / result.attempts)

    def test_exhausted(self):
        g = fixture_grammar("g1")
        m = TableLM.flat(self.fx.model.vocabulary, {"<eos>": 1.0})
        with self.assertRaises(Exhausted):
            rejection_sample(m, g, make_generator(0), 5, 4)

class SampleScoreConsistencyTests(unittest.TestCase):
    def test_sampled_logprob_matches_continuation_scoring(self):
        rng = make_generator(21)
        for grammar_name in ("g1", "star", "expr"):
            for lm_name in ("m1", "bigram"):
                fx = fixture(grammar_name, lm_name)
                decoder = decoder_for(fx.model, fx.grammar)
                for _ in range(60):
                    try:
                        w = decoder.sample(Sequence(), rng, fx.max_tokens).sequence
                        cut = int(rng.integers(len(w) + 1))
                        s = gcd_sample(fx.model, fx.grammar, w.prefix(cut), rng, fx.max_tokens)
                    except LengthExceeded:
                        continue
                    with self.subTest(grammar=grammar_name, lm=lm_name, text=fx.model.vocabulary.text(s.sequence)):
                        expected = gcd_continuation_logprob(fx.model, fx.grammar, s.sequence, cut)
                        self.assertAlmostEqual(s.gcd_logprob, expected, delta=1e-10)
                        self.assertAlmostEqual(s.lm_logprob, lm_logprob(fx.model, s.sequence, cut), delta=1e-10)


class LruDictTests(unittest.TestCase):
    def test_evicts_least_recently_used(self):
        cache = LruDict(2)
        cache["a"] = 1
        cache["b"] = 2
        self.assertEqual(cache["a"], 1)
        cache["c"] = 3
        self.assertEqual(list(cache), ["a", "c"])
        self.assertEqual(cache.evictions, 1)
        self.assertIsNone(cache.get("b"))

    def test_stored_none_is_distinct_from_missing(self):
        cache = LruDict(1)
        cache["dead"] = None
        marker = object()
        self.assertIsNone(cache.get("dead", marker))
        self.assertIs(cache.get("other", marker), marker)

    def test_pickles_empty_with_its_bound(self):
        cache = LruDict(7)
        cache["a"] = 1
        copy = pickle.loads(pickle.dumps(cache))
        self.assertEqual((len(copy), copy.maxsize), (0, 7))

    def test_rejects_non_positive_size(self):
        with self.assertRaises(ValueError):
            LruDict(0)


class DecoderMemoryTests(unittest.TestCase):
    """Many chains over one decoder keep its tables within cache_size."""

    CACHE_SIZE = 64

    def setUp(self) -> None:
        self.grammar = load_grammar(ASSETS / "grammars" / "xml.ebnf")
        terminals = recognizer_for(self.grammar).grammar.terminals
        corpus = load_corpus(ASSETS / "corpora" / "xml.txt")
        self.model = train_ngram(corpus, 2, 0.2, extra_tokens=terminals)

    def test_tables_stay_bounded_across_many_chains(self):
        small = ConstrainedDecoder(self.model, self.grammar, cache_size=self.CACHE_SIZE)
        roomy = ConstrainedDecoder(self.model, self.grammar, cache_size=1_000_000)
        chains = 40 if SLOW else 20
        for seed in range(chains):
            params = ChainParams(ProposalKind.PRIORITY, k=4, max_tokens=64, rng_seed=seed)
            try:
                bounded = run_chain(params, self.model, self.grammar, decoder=small)
            except LengthExceeded:
                continue
            reference = run_chain(params, self.model, self.grammar, decoder=roomy)
            self.assertEqual(bounded.states, reference.states)
            for w in bounded.states:
                self.assertTrue(recognize(self.grammar, self.model.vocabulary.text(w)))
            for table, size in small.cache_sizes().items():
                self.assertLessEqual(size, self.CACHE_SIZE, table)
        # the workload really did outgrow the bound
        self.assertGreater(roomy.cache_sizes()["steps"], 2 * self.CACHE_SIZE)

    def test_eviction_does_not_change_scores(self):
        small = ConstrainedDecoder(self.model, self.grammar, cache_size=2)
        roomy = ConstrainedDecoder(self.model, self.grammar)
        rng = make_generator(4)
        for _ in range(10):
            try:
                w = roomy.sample(Sequence(), rng, 128).sequence
            except LengthExceeded:
                continue
            np.testing.assert_array_equal(small.suffix_logprobs(w), roomy.suffix_logprobs(w))


if __name__ == "__main__":
    unittest.main()
