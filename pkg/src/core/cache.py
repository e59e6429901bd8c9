"""Size-bounded memo tables for per-prefix decoding state."""

from __future__ import annotations

from collections import OrderedDict
from typing import Any, Hashable

DEFAULT_CACHE_SIZE = 2048


class LruDict(OrderedDict):
    """Mapping that evicts its least recently used entry past maxsize.

    Reads through [] and get() refresh recency; `in` does not.
    """

    def __init__(self, maxsize: int = DEFAULT_CACHE_SIZE) -> None:
        if maxsize < 1:
            raise ValueError("cache size must be >= 1")
        super().__init__()
        self.maxsize = maxsize
        self.evictions = 0

    def __getitem__(self, key: Hashable) -> Any:
        value = super().__getitem__(key)
        self.move_to_end(key)
        return value

    def get(self, key: Hashable, default: Any = None) -> Any:
        try:
            return self[key]
        except KeyError:
            return default

    def __setitem__(self, key: Hashable, value: Any) -> None:
        super().__setitem__(key, value)
        self.move_to_end(key)
        if len(self) > self.maxsize:
            self.popitem(last=False)
            self.evictions += 1

    def __reduce__(self):
        return (type(self), (self.maxsize,))
