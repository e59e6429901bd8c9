"""Log-space probability helpers."""

from __future__ import annotations

import math
from typing import Iterable

import numpy as np
from scipy.special import logsumexp

LOG_ZERO = float("-inf")
LOG_ONE = 0.0


def safe_log(x: float) -> float:
    """Logarithm that maps zero to negative infinity."""
    if x <= 0.0:
        return LOG_ZERO
    return math.log(x)


def log_sum(terms: Iterable[float]) -> float:
    """Log of the sum of exponentials; empty or all -inf input gives -inf."""
    finite = np.array([t for t in terms if t != LOG_ZERO], dtype=float)
    if finite.size == 0:
        return LOG_ZERO
    return float(logsumexp(finite))

