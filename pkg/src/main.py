"""
GRAMMCMC - grammar-aligned sampling from language models

Architecture:
    EBNF → CFG → Earley prefix recognizer → masked decoding (GCD)
         → Metropolis-Hastings over GCD proposals → exact oracles / KL reports

Usage:
    python -m src.main sample --grammar G.ebnf --lm table:M.json --method mcmc-restart -k 10 --out-dir runs/r1
    python -m src.main oracle --fixtures
    python -m src.main eval runs/r1 runs/r2 --grammar G.ebnf --lm table:M.json --out report.csv
    python -m src.main corpus --grammar assets/grammars/xml.ebnf --lm ngram:assets/corpora/xml.txt --out-dir seeds --ext xml
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import List, Optional

from src.cli.commands import cmd_corpus, cmd_enumerate, cmd_eval, cmd_oracle, cmd_sample
from src.cli.run_config import METHODS, build_run_config
from src.core.config import configure_logging, load_config
from src.core.errors import ConfigError, GrammcmcError
from src.mcmc.proposals import ProposalKind

# flags that are not RunConfig fields
_COMMAND_ONLY = {
    "command", "config_file", "engine_config", "verbose", "fixtures", "kinds", "report",
    "dump_matrix", "corrupt_alpha", "run_dirs", "out", "exact", "ext", "max_chars",
}


def _add_run_flags(p: argparse.ArgumentParser, with_method: bool = True) -> None:
    # every default is None so config-file and env layers can fill the gaps
    p.add_argument("--grammar", type=Path, help="EBNF grammar file")
    p.add_argument("--lm", help="table:PATH | ngram:PATH | uniform | remote:URL")
    if with_method:
        p.add_argument("--method", choices=METHODS, help="Sampling method (default gcd)")
        p.add_argument("-k", type=int, dest="k", help="MCMC chain length (mcmc-* only)")
        p.add_argument("-n", "--n-samples", type=int, dest="n_samples", help="Independent chains (default 100)")
        p.add_argument("--seed", type=int, help="Base seed; chain i uses seed+i (default 42)")
        p.add_argument("--workers", type=int, help="Worker processes (default logical CPUs)")
        p.add_argument("--max-attempts", type=int, dest="max_attempts", help="Rejection sampling attempt budget")
        p.add_argument("--max-init-attempts", type=int, dest="max_init_attempts")
        p.add_argument("--cache-size", type=int, dest="cache_size", help="Memoized prefixes per decoder table")
    p.add_argument("--max-tokens", type=int, dest="max_tokens", help="Content-token cap per sequence")
    p.add_argument("--ngram-order", type=int, dest="ngram_order")
    p.add_argument("--ngram-alpha", type=float, dest="ngram_alpha")
    p.add_argument("--vocab", type=Path, help="JSON token list for uniform/remote models")
    p.add_argument("--benchmark", help="Benchmark label written to traces (default grammar file stem)")
    p.add_argument("--config-file", type=Path, dest="config_file", help="Flat key=value run config")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="grammcmc", description="GRAMMCMC - grammar-aligned MCMC sampling")
    parser.add_argument("-v", "--verbose", action="store_true", help="INFO-level logging")
    parser.add_argument("--engine-config", type=Path, dest="engine_config", help="Engine YAML (default config.yaml)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="Draw samples and write samples.txt + traces.jsonl")
    _add_run_flags(p)
    p.add_argument("--out-dir", type=Path, dest="out_dir", help="Output directory")

    p = sub.add_parser("oracle", help="Exact stationarity and convergence checks")
    _add_run_flags(p, with_method=False)
    p.add_argument("--fixtures", action="store_true", help="Run the pinned fixture matrix (default without --grammar)")
    p.add_argument("--kind", dest="kinds", action="append", type=ProposalKind.parse,
                   help="Proposal kind (repeatable; default all)")
    p.add_argument("--report", type=Path, help="Write oracle metrics CSV")
    p.add_argument("--dump-matrix", type=Path, dest="dump_matrix", help="Directory for transition matrix dumps")
    p.add_argument("--corrupt-alpha", action="store_true", dest="corrupt_alpha", help=argparse.SUPPRESS)

    p = sub.add_parser("eval", help="KL report CSV from run directories")
    _add_run_flags(p, with_method=False)
    p.add_argument("run_dirs", nargs="+", type=Path, help="Run directories or traces.jsonl files")
    p.add_argument("--out", type=Path, required=True, help="Report CSV path")
    p.add_argument("--exact", action="store_true", help="Also report KL to the exact target")

    p = sub.add_parser("corpus", help="Emit deduplicated fuzzing seed files")
    _add_run_flags(p)
    p.add_argument("--out-dir", type=Path, dest="out_dir", help="Seed directory")
    p.add_argument("--ext", default="txt", help="Seed file extension (default txt)")

    p = sub.add_parser("enumerate", help="List the bounded language of a grammar")
    p.add_argument("--grammar", type=Path, required=True)
    p.add_argument("--max-chars", type=int, dest="max_chars", required=True)
    p.add_argument("--out", type=Path, help="Output file (default stdout)")
    return parser


def run(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    engine = load_config(args.engine_config)
    configure_logging(engine.logging, verbose=args.verbose)

    if args.command == "enumerate":
        return cmd_enumerate(args.grammar, args.max_chars, engine, args.out)

    flags = {k: v for k, v in vars(args).items() if k not in _COMMAND_ONLY}
    cfg = build_run_config(flags, engine, config_file=args.config_file)

    if args.command == "sample":
        return cmd_sample(cfg, engine)
    if args.command == "oracle":
        return cmd_oracle(
            cfg,
            engine,
            kinds=tuple(args.kinds) if args.kinds else tuple(ProposalKind),
            use_fixtures=args.fixtures,
            report_path=args.report,
            dump_dir=args.dump_matrix,
            corrupt_alpha=args.corrupt_alpha,
        )
    if args.command == "eval":
        return cmd_eval(cfg, engine, args.run_dirs, args.out, with_exact=args.exact)
    if args.command == "corpus":
        if cfg.out_dir is None:
            raise ConfigError("corpus needs --out-dir")
        return cmd_corpus(cfg, engine, cfg.out_dir, args.ext)
    raise ConfigError(f"Unknown command {args.command!r}")


def main(argv: Optional[List[str]] = None) -> int:
    try:
        return run(argv)
    except GrammcmcError as exc:
        print(f"❌ {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except KeyboardInterrupt:
        print("\nInterrupted by user (Ctrl+C)")
        return 130


if __name__ == "__main__":
    sys.exit(main())
