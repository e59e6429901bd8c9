"""Deterministic random streams.

Each chain owns one counter-based (Philox) stream split into three
independent substreams, so draws for truncation points, GCD tokens and
acceptance coins never interleave and results do not depend on
evaluation order or worker count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def make_generator(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


@dataclass(frozen=True)
class ChainRng:
    truncation: np.random.Generator
    gcd: np.random.Generator
    bernoulli: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int) -> "ChainRng":
        children = np.random.SeedSequence(seed).spawn(3)
        streams = [np.random.Generator(np.random.Philox(child)) for child in children]
        return cls(truncation=streams[0], gcd=streams[1], bernoulli=streams[2])


def categorical(rng: np.random.Generator, probs: np.ndarray) -> int:
    """Draw an index from a probability vector by inverse CDF.

    Uses a single uniform per draw so the consumed stream is identical
    across platforms. Zero-probability entries are never returned.
    """
    return categorical_cdf(rng, np.cumsum(probs))


def categorical_cdf(rng: np.random.Generator, cdf: np.ndarray) -> int:
    """categorical() on a precomputed cumulative sum."""
    u = rng.random() * cdf[-1]
    idx = int(np.searchsorted(cdf, u, side="right"))
    if idx >= len(cdf):
        # u landed on the top edge through rounding
        idx = int(np.searchsorted(cdf, cdf[-1], side="left"))
    return idx


def categorical_many(rng: np.random.Generator, cdf: np.ndarray, n: int) -> np.ndarray:
    """n independent draws from one precomputed cumulative sum."""
    u = rng.random(n) * cdf[-1]
    idx = np.searchsorted(cdf, u, side="right")
    return np.minimum(idx, np.searchsorted(cdf, cdf[-1], side="left"))
