import contextlib
import csv
import io
import tempfile
import unittest
from pathlib import Path

from src.cli.run_config import RunConfig, build_run_config, env_overrides, parse_kv_file
from src.core.config import default_config
from src.core.errors import ConfigError
from src.grammar.earley import recognize
from src.grammar.ebnf import unescape_text
from src.eval.fixtures import fixture_grammar, load_grammar
from src.main import main

ROOT = Path(__file__).resolve().parent.parent
G1 = str(ROOT / "assets" / "fixtures" / "g1.ebnf")
M1 = "table:" + str(ROOT / "assets" / "fixtures" / "m1_g1.json")
XML = ROOT / "assets" / "grammars" / "xml.ebnf"
XML_LM = "ngram:" + str(ROOT / "assets" / "corpora" / "xml.txt")
SQLITE = ROOT / "assets" / "grammars" / "sqlite_test.ebnf"
SQLITE_LM = "ngram:" + str(ROOT / "assets" / "corpora" / "sqlite_test.txt")


def quiet_main(argv):
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main(argv)
    return code, out.getvalue(), err.getvalue()


def g1_sample_args(out_dir, method="mcmc-restart", k="3", n="6", seed="42", workers="1"):
    args = ["sample", "--grammar", G1, "--lm", M1, "--method", method, "-n", n,
            "--max-tokens", "4", "--seed", seed, "--workers", workers, "--out-dir", str(out_dir)]
    if k is not None:
        args += ["-k", k]
    return args


class RunConfigTests(unittest.TestCase):
    def setUp(self) -> None:
        self.engine = default_config()

    def test_engine_defaults_fill_unset_values(self):
        cfg = build_run_config({"grammar": Path(G1)}, self.engine, environ={})
        self.assertEqual(cfg.max_tokens, 512)
        self.assertEqual(cfg.seed, 42)
        self.assertEqual(cfg.method, "gcd")
        self.assertIsNone(cfg.k)
        self.assertEqual(cfg.benchmark_name, "g1")
        self.assertEqual(cfg.cache_size, 2048)

    def test_layers_in_order(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "run.cfg"
            path.write_text("# run\nseed = 7\nn-samples=30\nmax_tokens=9\n", encoding="utf-8")
            cfg = build_run_config(
                {"seed": 99, "lm": None},
                self.engine,
                config_file=path,
                environ={"GRAMMCMC_N_SAMPLES": "12", "GRAMMCMC_UNRELATED": "x", "HOME": "/"},
            )
        self.assertEqual(cfg.seed, 99)
        self.assertEqual(cfg.n_samples, 12)
        self.assertEqual(cfg.max_tokens, 9)
        self.assertEqual(cfg.lm, "uniform")

    def test_k_only_with_mcmc(self):
        with self.assertRaises(ConfigError):
            build_run_config({"method": "mcmc-uniform"}, self.engine, environ={})
        with self.assertRaises(ConfigError):
            build_run_config({"method": "gcd", "k": 3}, self.engine, environ={})
        cfg = build_run_config({"method": "mcmc-priority", "k": 0}, self.engine, environ={})
        self.assertEqual(cfg.k, 0)

    def test_invalid_values(self):
        bad = [
            {"method": "beam"},
            {"lm": "table"},
            {"lm": "gpt:foo"},
            {"max_tokens": 0},
            {"workers": 0},
            {"n_samples": -1},
            {"cache_size": 0},
        ]
        for flags in bad:
            with self.subTest(flags=flags), self.assertRaises(ConfigError):
                build_run_config(flags, self.engine, environ={})

    def test_unparseable_env_value(self):
        with self.assertRaises(ConfigError):
            build_run_config({}, self.engine, environ={"GRAMMCMC_SEED": "abc"})

    def test_kv_file_errors(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "run.cfg"
            path.write_text("seed 4\n", encoding="utf-8")
            with self.assertRaises(ConfigError):
                parse_kv_file(path)
            path.write_text("colour=blue\n", encoding="utf-8")
            with self.assertRaises(ConfigError):
                build_run_config({}, self.engine, config_file=path, environ={})
        with self.assertRaises(ConfigError):
            parse_kv_file(Path(tmp) / "gone.cfg")

    def test_env_overrides_filters_prefix(self):
        self.assertEqual(env_overrides({"GRAMMCMC_K": "4", "K": "5"}), {"k": "4"})

    def test_lm_spec_parts(self):
        cfg = RunConfig(lm="remote:http://localhost:8000/next")
        self.assertEqual(cfg.lm_scheme, "remote")
        self.assertEqual(cfg.lm_target, "http://localhost:8000/next")


class ExitCodeTests(unittest.TestCase):
    def test_config_errors_exit_one(self):
        with tempfile.TemporaryDirectory() as tmp:
            code, _, err = quiet_main(["sample", "--lm", M1, "--out-dir", tmp])
            self.assertEqual(code, 1)
            self.assertIn("ConfigError", err)
            code, _, _ = quiet_main(g1_sample_args(tmp, method="gcd", k="2"))
            self.assertEqual(code, 1)

    def test_bad_grammar_exits_one(self):
        with tempfile.TemporaryDirectory() as tmp:
            g = Path(tmp) / "bad.ebnf"
            g.write_text('s ::= ( "a"\n', encoding="utf-8")
            code, _, err = quiet_main(["sample", "--grammar", str(g), "--out-dir", tmp])
        self.assertEqual(code, 1)
        self.assertIn("EbnfSyntaxError", err)

    def test_rejection_budget_exits_two_with_partial_output(self):
        with tempfile.TemporaryDirectory() as tmp:
            out = Path(tmp) / "rej"
            args = g1_sample_args(out, method="rejection", k=None, n="10") + ["--max-attempts", "5"]
            code, stdout, _ = quiet_main(args)
            self.assertEqual(code, 2)
            self.assertIn("chains failed", stdout)
            lines = (out / "samples.txt").read_text(encoding="utf-8").splitlines()
            self.assertLess(len(lines), 10)
            for line in lines:
                self.assertIn(line, {"00", "11"})

    def test_corrupted_acceptance_fails_oracle(self):
        base = ["oracle", "--grammar", G1, "--lm", M1, "--max-tokens", "4", "--kind", "restart"]
        code, stdout, _ = quiet_main(base)
        self.assertEqual(code, 0)
        self.assertIn("All oracle checks passed", stdout)
        code, _, err = quiet_main(base + ["--corrupt-alpha"])
        self.assertEqual(code, 3)
        self.assertIn("VerificationFailed", err)


class SampleCommandTests(unittest.TestCase):
    def test_outputs_and_reproducibility(self):
        with tempfile.TemporaryDirectory() as tmp:
            a, b, c = Path(tmp) / "a", Path(tmp) / "b", Path(tmp) / "c"
            code_a, stdout_a, _ = quiet_main(g1_sample_args(a))
            self.assertEqual(code_a, 0)
            self.assertEqual(quiet_main(g1_sample_args(b))[0], 0)
            code_c, stdout_c, _ = quiet_main(g1_sample_args(c, workers="2"))
            self.assertEqual(code_c, 0)
            for name in ("samples.txt", "traces.jsonl"):
                self.assertEqual((a / name).read_bytes(), (b / name).read_bytes())
                self.assertEqual((a / name).read_bytes(), (c / name).read_bytes())

            samples = (a / "samples.txt").read_text(encoding="utf-8").splitlines()
            self.assertEqual(len(samples), 6)
            self.assertTrue(all(s in {"00", "11"} for s in samples))
            # one line for w_0 plus one per step, per chain
            traces = (a / "traces.jsonl").read_text(encoding="utf-8").splitlines()
            self.assertEqual(len(traces), 6 * 4)

            # 6 chains x 4 restart completions, each "0" "0" <eos> masking 1 + 2 + 2 of 3 tokens
            for stdout in (stdout_a, stdout_c):
                self.assertIn("GCD masked 1.67 of 3 tokens per step (120 masked over 72 decoding steps)", stdout)

    def test_seed_changes_output(self):
        with tempfile.TemporaryDirectory() as tmp:
            a, b = Path(tmp) / "a", Path(tmp) / "b"
            quiet_main(g1_sample_args(a, n="20", k="5"))
            quiet_main(g1_sample_args(b, n="20", k="5", seed="1000"))
            self.assertNotEqual((a / "traces.jsonl").read_bytes(), (b / "traces.jsonl").read_bytes())

    def test_gcd_method(self):
        with tempfile.TemporaryDirectory() as tmp:
            out = Path(tmp) / "gcd"
            code, _, _ = quiet_main(g1_sample_args(out, method="gcd", k=None, n="4"))
            self.assertEqual(code, 0)
            self.assertEqual(len((out / "traces.jsonl").read_text(encoding="utf-8").splitlines()), 4)


class CorpusCommandTests(unittest.TestCase):
    def args(self, out_dir, n="8"):
        return ["corpus", "--grammar", str(XML), "--lm", XML_LM, "-n", n, "--max-tokens", "256",
                "--seed", "3", "--workers", "1", "--out-dir", str(out_dir), "--ext", "xml"]

    def test_seeds_parse_and_are_reproducible(self):
        grammar = load_grammar(XML)
        with tempfile.TemporaryDirectory() as tmp:
            a, b = Path(tmp) / "a", Path(tmp) / "b"
            code, stdout, _ = quiet_main(self.args(a))
            self.assertEqual(code, 0)
            self.assertIn("kept", stdout)
            quiet_main(self.args(b))

            files = sorted(a.iterdir())
            self.assertTrue(files)
            self.assertLessEqual(len(files), 8)
            self.assertEqual(files[0].name, "seed-0001.xml")
            texts = [f.read_bytes().decode("utf-8") for f in files]
            self.assertEqual(len(set(texts)), len(texts))
            for text in texts:
                self.assertTrue(recognize(grammar, text), text)
            self.assertEqual([f.name for f in files], sorted(f.name for f in b.iterdir()))
            for f in files:
                self.assertEqual(f.read_bytes(), (b / f.name).read_bytes())

    def test_zero_samples_leaves_directory_empty(self):
        with tempfile.TemporaryDirectory() as tmp:
            out = Path(tmp) / "empty"
            code, stdout, _ = quiet_main(self.args(out, n="0"))
            self.assertEqual(code, 0)
            self.assertTrue(out.is_dir())
            self.assertEqual(list(out.iterdir()), [])
            self.assertIn("⚠️", stdout)

    def test_hundred_xml_seeds(self):
        grammar = load_grammar(XML)
        with tempfile.TemporaryDirectory() as tmp:
            a, b = Path(tmp) / "a", Path(tmp) / "b"
            self.assertEqual(quiet_main(self.args(a, n="100") + ["--ngram-alpha", "0.2"])[0], 0)
            self.assertEqual(quiet_main(self.args(b, n="100") + ["--ngram-alpha", "0.2"])[0], 0)
            files = sorted(a.iterdir())
            self.assertEqual(len(files), 100)
            self.assertEqual(files[-1].name, "seed-0100.xml")
            for f in files:
                self.assertTrue(recognize(grammar, f.read_bytes().decode("utf-8")), f.name)
                self.assertEqual(f.read_bytes(), (b / f.name).read_bytes())

    def test_mcmc_sqlite_test_scripts(self):
        grammar = load_grammar(SQLITE)
        args = ["corpus", "--grammar", str(SQLITE), "--lm", SQLITE_LM, "--ngram-alpha", "0.01",
                "--method", "mcmc-restart", "-k", "2", "-n", "5", "--max-tokens", "512",
                "--seed", "11", "--workers", "1", "--ext", ".test"]
        with tempfile.TemporaryDirectory() as tmp:
            out = Path(tmp) / "sqlite"
            code, stdout, _ = quiet_main(args + ["--out-dir", str(out)])
            self.assertEqual(code, 0, stdout)
            files = sorted(out.iterdir())
            self.assertTrue(files)
            self.assertTrue(all(f.suffix == ".test" for f in files))
            for f in files:
                text = f.read_bytes().decode("utf-8")
                self.assertTrue(recognize(grammar, text), text)
                self.assertTrue(text.startswith("set testdir [file dirname $argv0]\n"))
                self.assertIn("set ::timeout 60000\n", text)
                self.assertTrue(text.endswith("finish_test\n"))


class EvalCommandTests(unittest.TestCase):
    def test_empty_directory_is_insufficient(self):
        with tempfile.TemporaryDirectory() as tmp:
            code, _, err = quiet_main(["eval", tmp, "--grammar", G1, "--lm", M1, "--out", str(Path(tmp) / "r.csv")])
        self.assertEqual(code, 2)
        self.assertIn("InsufficientRuns", err)

    def test_report_groups_methods(self):
        with tempfile.TemporaryDirectory() as tmp:
            root = Path(tmp)
            for i, seed in enumerate(("1", "500")):
                quiet_main(g1_sample_args(root / f"mcmc{i}", n="40", seed=seed))
                quiet_main(g1_sample_args(root / f"gcd{i}", method="gcd", k=None, n="40", seed=seed))
            out = root / "report.csv"
            code, _, _ = quiet_main(
                ["eval", str(root), "--grammar", G1, "--lm", M1, "--max-tokens", "4", "--exact", "--out", str(out)]
            )
            self.assertEqual(code, 0)
            with out.open(encoding="utf-8") as fh:
                rows = list(csv.DictReader(fh))

        mcmc = [r for r in rows if r["method"] == "mcmc-restart" and r["benchmark"] == "g1"]
        gcd = [r for r in rows if r["method"] == "gcd"]
        self.assertEqual(sorted({int(r["k"]) for r in mcmc if r["metric"] == "kl_to_lm"}), [0, 1, 2, 3])
        self.assertEqual({r["metric"] for r in gcd}, {"kl_to_lm", "kl_to_target"})
        self.assertEqual({r["k"] for r in gcd}, {"0"})
        for r in rows:
            if r["metric"] in ("kl_to_lm", "kl_to_target"):
                self.assertEqual(r["n_runs"], "2")
                self.assertLessEqual(float(r["ci_low"]), float(r["value"]) + 1e-12)
                self.assertLessEqual(float(r["value"]), float(r["ci_high"]) + 1e-12)
        ratios = [r for r in rows if r["metric"] == "kl_reduction_vs_gcd"]
        self.assertEqual(sorted({r["benchmark"] for r in ratios}), ["g1", "geomean"])


class EnumerateCommandTests(unittest.TestCase):
    def test_stdout_and_file(self):
        code, stdout, _ = quiet_main(["enumerate", "--grammar", G1, "--max-chars", "4"])
        self.assertEqual(code, 0)
        self.assertEqual(stdout, "00\n11\n")
        with tempfile.TemporaryDirectory() as tmp:
            out = Path(tmp) / "lang.txt"
            quiet_main(["enumerate", "--grammar", str(ROOT / "assets" / "fixtures" / "expr.ebnf"),
                        "--max-chars", "4", "--out", str(out)])
            words = [unescape_text(line) for line in out.read_text(encoding="utf-8").splitlines()]
        self.assertEqual(words, ["", "(())", "()", "()()"])
        for word in words:
            self.assertTrue(recognize(fixture_grammar("expr"), word))


if __name__ == "__main__":
    unittest.main()
