"""
HTTP client for externally served language models.

Wire protocol: POST {endpoint}/v1/next_dist with body {"prefix": [tok, ...]},
answered by {"probs": {tok: p, ..., "<eos>": p}}. Every vocabulary entry
must be present; small summation drift is renormalized away.
"""

from __future__ import annotations

import json
import logging
import socket
import urllib.error
import urllib.request
from functools import lru_cache
from typing import Dict, Tuple

import numpy as np

from src.core.errors import LmTimeout, ProtocolViolation, Transport
from src.lm.models import LanguageModel
from src.lm.vocabulary import EOS, NextTokenDist, Sequence, Vocabulary

logger = logging.getLogger(__name__)

DEFAULT_TIMEOUT_S = 2.0
DEFAULT_SUM_TOLERANCE = 1e-6
NEXT_DIST_PATH = "/v1/next_dist"


def _post_json(url: str, payload: dict, timeout_s: float) -> object:
    body = json.dumps(payload).encode("utf-8")
    request = urllib.request.Request(
        url,
        data=body,
        method="POST",
        headers={"Content-Type": "application/json", "Accept": "application/json"},
    )
    try:
        with urllib.request.urlopen(request, timeout=timeout_s) as response:
            raw = response.read()
    except socket.timeout as exc:
        raise LmTimeout(timeout_s) from exc
    except urllib.error.URLError as exc:
        if isinstance(exc.reason, socket.timeout):
            raise LmTimeout(timeout_s) from exc
        raise Transport(exc) from exc
    except OSError as exc:
        raise Transport(exc) from exc
    try:
        return json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolViolation(f"response is not JSON: {exc}") from exc


def decode_response(doc: object, vocabulary: Vocabulary, sum_tolerance: float) -> NextTokenDist:
    """Validate a /v1/next_dist response body and turn it into a distribution."""
    if not isinstance(doc, dict) or not isinstance(doc.get("probs"), dict):
        raise ProtocolViolation("response must be an object with a 'probs' object")
    probs: Dict[str, object] = doc["probs"]

    expected = list(vocabulary.tokens) + [EOS]
    missing = [tok for tok in expected if tok not in probs]
    if missing:
        raise ProtocolViolation(f"missing entries for {missing[:5]!r}")
    unknown = [tok for tok in probs if tok not in vocabulary]
    if unknown:
        raise ProtocolViolation(f"unknown tokens {unknown[:5]!r}")

    try:
        vec = np.array([float(probs[tok]) for tok in expected], dtype=float)
    except (TypeError, ValueError) as exc:
        raise ProtocolViolation(f"non-numeric probability: {exc}") from exc
    if not np.all(np.isfinite(vec)) or np.any(vec < 0.0):
        raise ProtocolViolation("probabilities must be finite and non-negative")
    total = float(vec.sum())
    if abs(total - 1.0) > sum_tolerance:
        raise ProtocolViolation(f"probabilities sum to {total:.12g}")
    if total != 1.0:
        logger.debug("Renormalizing remote distribution (sum drift %.3g)", total - 1.0)
    return NextTokenDist(vec / total)


def remote_next_dist(
    endpoint: str,
    prefix: Sequence,
    vocabulary: Vocabulary,
    timeout_s: float = DEFAULT_TIMEOUT_S,
    sum_tolerance: float = DEFAULT_SUM_TOLERANCE,
) -> NextTokenDist:
    """One round trip to the remote model for the given prefix."""
    url = endpoint.rstrip("/") + NEXT_DIST_PATH
    doc = _post_json(url, {"prefix": vocabulary.decode(prefix)}, timeout_s)
    return decode_response(doc, vocabulary, sum_tolerance)


class RemoteLM(LanguageModel):
    """LanguageModel backed by remote_next_dist, memoized per prefix.

    The cache keeps next_dist referentially transparent for the lifetime
    of the object even if the server is not.
    """

    def __init__(
        self,
        endpoint: str,
        vocabulary: Vocabulary,
        timeout_s: float = DEFAULT_TIMEOUT_S,
        sum_tolerance: float = DEFAULT_SUM_TOLERANCE,
        cache_size: int = 65536,
    ) -> None:
        self.endpoint = endpoint
        self._vocabulary = vocabulary
        self.timeout_s = timeout_s
        self.sum_tolerance = sum_tolerance
        self.cache_size = cache_size
        self._lookup = lru_cache(maxsize=cache_size)(self._fetch)

    @property
    def vocabulary(self) -> Vocabulary:
        return self._vocabulary

    @property
    def name(self) -> str:
        return "remote"

    def _fetch(self, tokens: Tuple[int, ...]) -> NextTokenDist:
        return remote_next_dist(
            self.endpoint,
            Sequence(tokens),
            self._vocabulary,
            timeout_s=self.timeout_s,
            sum_tolerance=self.sum_tolerance,
        )

    def next_dist(self, prefix: Sequence) -> NextTokenDist:
        return self._lookup(prefix.tokens)

    def __getstate__(self) -> dict:
        state = self.__dict__.copy()
        del state["_lookup"]
        return state

    def __setstate__(self, state: dict) -> None:
        self.__dict__.update(state)
        self._lookup = lru_cache(maxsize=self.cache_size)(self._fetch)
