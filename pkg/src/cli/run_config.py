"""
Run-level configuration for the CLI.

Values are layered, later layers winning:
    engine defaults (config.yaml) → --config-file key=value → GRAMMCMC_* env → flags
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

from src.core.config import Config
from src.core.errors import ConfigError
from src.mcmc.proposals import ProposalKind

logger = logging.getLogger(__name__)

ENV_PREFIX = "GRAMMCMC_"
METHODS = ("gcd", "rejection", "mcmc-uniform", "mcmc-priority", "mcmc-restart")
LM_SCHEMES = ("table", "ngram", "remote")


@dataclass(frozen=True)
class RunConfig:
    grammar: Optional[Path] = None
    lm: str = "uniform"
    method: str = "gcd"
    k: Optional[int] = None
    n_samples: int = 100
    max_tokens: int = 512
    seed: int = 42
    out_dir: Optional[Path] = None
    workers: Optional[int] = None
    ngram_order: int = 2
    ngram_alpha: float = 1.0
    vocab: Optional[Path] = None
    max_attempts: int = 1000
    max_init_attempts: int = 100
    cache_size: int = 2048
    benchmark: str = ""

    @property
    def is_mcmc(self) -> bool:
        return self.method.startswith("mcmc-")

    @property
    def proposal_kind(self) -> Optional[ProposalKind]:
        return ProposalKind.parse(self.method) if self.is_mcmc else None

    @property
    def lm_scheme(self) -> str:
        return self.lm.split(":", 1)[0] if ":" in self.lm else self.lm

    @property
    def lm_target(self) -> str:
        return self.lm.split(":", 1)[1] if ":" in self.lm else ""

    @property
    def benchmark_name(self) -> str:
        if self.benchmark:
            return self.benchmark
        return self.grammar.stem if self.grammar else ""

    def validate(self) -> "RunConfig":
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {', '.join(METHODS)}; got {self.method!r}")
        if self.is_mcmc and self.k is None:
            raise ConfigError(f"method {self.method} needs -k (chain length)")
        if not self.is_mcmc and self.k is not None:
            raise ConfigError(f"-k only applies to mcmc-* methods, not {self.method}")
        if self.k is not None and self.k < 0:
            raise ConfigError("k must be >= 0")
        if self.n_samples < 0:
            raise ConfigError("n_samples must be >= 0")
        if self.max_tokens < 1:
            raise ConfigError("max_tokens must be >= 1")
        if self.max_attempts < 1 or self.max_init_attempts < 1:
            raise ConfigError("attempt limits must be >= 1")
        if self.cache_size < 1:
            raise ConfigError("cache_size must be >= 1")
        if self.workers is not None and self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.ngram_order < 1 or self.ngram_alpha <= 0:
            raise ConfigError("ngram order must be >= 1 and alpha > 0")
        if self.lm != "uniform":
            if self.lm_scheme not in LM_SCHEMES or not self.lm_target:
                raise ConfigError(
                    f"lm spec {self.lm!r} must be table:PATH, ngram:PATH, uniform or remote:URL"
                )
        return self


_NULLS = {"", "none", "null"}


def _coerce(name: str, raw: Any, current: Any) -> Any:
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if name in ("k", "workers"):
            return None if text.lower() in _NULLS else int(text)
        if name in ("grammar", "out_dir", "vocab"):
            return None if text.lower() in _NULLS else Path(text)
        if isinstance(current, bool):
            return text.lower() in ("1", "true", "yes", "on")
        if isinstance(current, int):
            return int(text)
        if isinstance(current, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r}") from None
    return text


def parse_kv_file(path: Path) -> Dict[str, str]:
    """Flat key=value file; blank lines and '#' comments are skipped."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"Cannot read config file {path}: {exc}") from exc
    values: Dict[str, str] = {}
    for n, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{n}: expected key=value")
        key, value = stripped.split("=", 1)
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def env_overrides(environ: Mapping[str, str]) -> Dict[str, str]:
    names = {f.name for f in fields(RunConfig)}
    out = {}
    for key, value in environ.items():
        if key.startswith(ENV_PREFIX):
            name = key[len(ENV_PREFIX):].lower()
            if name in names:
                out[name] = value
    return out


def build_run_config(
    flags: Mapping[str, Any],
    engine: Config,
    config_file: Optional[Path] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> RunConfig:
    """Merge every layer into a validated RunConfig.

    flags holds only options the user actually passed (None means unset).
    """
    environ = os.environ if environ is None else environ
    cfg = RunConfig(
        max_tokens=engine.decoding.max_tokens,
        seed=engine.run.seed,
        workers=engine.run.workers,
        max_attempts=engine.decoding.max_rejection_attempts,
        max_init_attempts=engine.decoding.max_init_attempts,
        cache_size=engine.decoding.cache_size,
    )
    names = {f.name for f in fields(RunConfig)}

    layers = []
    if config_file is not None:
        layers.append(("config file", parse_kv_file(config_file)))
    layers.append(("environment", env_overrides(environ)))
    layers.append(("flags", {k: v for k, v in flags.items() if v is not None and k in names}))

    for origin, layer in layers:
        unknown = sorted(set(layer) - names)
        if unknown:
            raise ConfigError(f"Unknown {origin} keys: {', '.join(unknown)}")
        updates = {key: _coerce(key, value, getattr(cfg, key)) for key, value in layer.items()}
        cfg = replace(cfg, **updates)
        if updates:
            logger.debug("Run config from %s: %s", origin, sorted(updates))
    return cfg.validate()
