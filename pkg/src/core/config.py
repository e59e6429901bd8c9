"""Configuration loader for GRAMMCMC.

Loads engine settings from config.yaml and provides defaults if missing.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Dict, Optional, Type, TypeVar

import yaml

from src.core.errors import ConfigError

T = TypeVar("T")

CONFIG_ENV_VAR = "GRAMMCMC_CONFIG"


@dataclass
class DecodingConfig:
    max_tokens: int = 512
    max_init_attempts: int = 100
    max_rejection_attempts: int = 1000
    cache_size: int = 2048


@dataclass
class GrammarConfig:
    enumeration_cap: int = 100_000


@dataclass
class OracleConfig:
    max_states: int = 2000
    stationary_tol: float = 1e-10
    horizon: int = 200
    convergence_tol: float = 1e-6
    monotone_slack: float = 1e-12
    balance_tol: float = 1e-10
    mass_tol: float = 1e-9


@dataclass
class EvalConfig:
    bootstrap_resamples: int = 1000
    confidence: float = 0.95
    bootstrap_seed: int = 0


@dataclass
class RemoteConfig:
    timeout_s: float = 2.0
    sum_tolerance: float = 1e-6


@dataclass
class RunDefaults:
    seed: int = 42
    workers: Optional[int] = None


@dataclass
class LoggingConfig:
    level: str = "WARNING"
    log_path: Optional[str] = None


@dataclass
class Config:
    decoding: DecodingConfig
    grammar: GrammarConfig
    oracle: OracleConfig
    eval: EvalConfig
    remote: RemoteConfig
    run: RunDefaults
    logging: LoggingConfig


def default_config() -> Config:
    return Config(
        decoding=DecodingConfig(),
        grammar=GrammarConfig(),
        oracle=OracleConfig(),
        eval=EvalConfig(),
        remote=RemoteConfig(),
        run=RunDefaults(),
        logging=LoggingConfig(),
    )


def _section(cls: Type[T], name: str, data: Dict[str, Any]) -> T:
    raw = data.get(name) or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"Config section '{name}' must be a mapping")
    known = {f.name for f in fields(cls)}  # type: ignore[arg-type]
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"Unknown key(s) in config section '{name}': {', '.join(unknown)}")
    return cls(**raw)


def load_config(config_path: Optional[Path] = None) -> Config:
    """Load configuration from YAML file with defaults."""
    if config_path is None:
        env_path = os.environ.get(CONFIG_ENV_VAR)
        if env_path:
            config_path = Path(env_path)
        else:
            config_path = Path(__file__).resolve().parent.parent.parent / "config.yaml"

    if not config_path.exists():
        print(f"⚠️  Config not found at {config_path}, using defaults")
        return default_config()

    try:
        with config_path.open("r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"Cannot parse {config_path}: {exc}") from exc

    if not isinstance(data, dict):
        raise ConfigError(f"{config_path} must contain a mapping at top level")

    return Config(
        decoding=_section(DecodingConfig, "decoding", data),
        grammar=_section(GrammarConfig, "grammar", data),
        oracle=_section(OracleConfig, "oracle", data),
        eval=_section(EvalConfig, "eval", data),
        remote=_section(RemoteConfig, "remote", data),
        run=_section(RunDefaults, "run", data),
        logging=_section(LoggingConfig, "logging", data),
    )


def configure_logging(config: LoggingConfig, verbose: bool = False) -> None:
    """Set up root logging once for CLI runs."""
    level = logging.INFO if verbose else getattr(logging, config.level.upper(), logging.WARNING)
    handlers: list = [logging.StreamHandler()]
    if config.log_path:
        path = Path(config.log_path)
        path.parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(path, encoding="utf-8"))
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        handlers=handlers,
        force=True,
    )
