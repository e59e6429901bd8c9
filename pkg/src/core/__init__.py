"""Core module for configuration, errors and numeric helpers."""

from src.core.config import Config, default_config, load_config
from src.core.errors import GrammcmcError
from src.core.rng import ChainRng, categorical, make_generator

__all__ = [
    "Config",
    "default_config",
    "load_config",
    "GrammcmcError",
    "ChainRng",
    "categorical",
    "make_generator",
]
