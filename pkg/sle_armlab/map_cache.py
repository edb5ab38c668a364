import logging
from collections import OrderedDict
from threading import RLock

from .exceptions import DataTooLarge
from .utils import _assert, get_deep_byte_size, user_input_byte_size_to_bytes

__all__ = ["MapCache"]

logger = logging.getLogger(__name__)


def _byte_budget(max_size_bytes):
    _assert(
        max_size_bytes is None or isinstance(max_size_bytes, (int, str)),
        "Invalid byte size",
    )
    if not max_size_bytes:
        return None
    return user_input_byte_size_to_bytes(max_size_bytes)


def _item_budget(max_items):
    _assert(max_items is None or isinstance(max_items, int), "Invalid max items")
    _assert(max_items is None or max_items > 0, "max_items must be >0")
    return max_items


class MapCache(OrderedDict):
    """
    Memo for boundary inversions of the half-strip map, safe to share between
    estimation threads

    Entries are evicted least recently used first (the HEAD of the OrderedDict) once
    either the entry count or the summed deep byte size of keys and values goes over
    its limit. Sizes are measured once per entry with objsize and kept in a running
    total.
    """

    def __init__(self, max_size_bytes=None, max_items=None, on_evict=None):
        """
        :param max_size_bytes: (int|str) optional: entry byte budget, 1024 or '1K'
        :param max_items: (int) optional: entry limit
        :param on_evict: (callable) optional: called as on_evict(key, value) whenever
            an entry is pushed out by a limit
        """
        super().__init__()
        self._lock = RLock()
        self._budget_user = max_size_bytes
        self._budget = _byte_budget(max_size_bytes)
        self._max_items = _item_budget(max_items)
        self._sizes = {}
        self._total = 0
        self.on_evict = on_evict
        self.hits = 0
        self.misses = 0

    def __getitem__(self, key):
        with self._lock:
            value = super().__getitem__(key)
            self.move_to_end(key)
            return value

    def __setitem__(self, key, value):
        size = get_deep_byte_size(key) + get_deep_byte_size(value)
        if self._budget is not None and size > self._budget:
            raise DataTooLarge(f"Entry of {size} bytes exceeds the cache budget")
        with self._lock:
            if key in self:
                self._forget(key)
            super().__setitem__(key, value)
            self._sizes[key] = size
            self._total += size
            self._evict_over_limits()

    def __delitem__(self, key):
        with self._lock:
            self._forget(key)

    def __repr__(self):
        return (
            f"<MapCache@{id(self):#08x}; max_memory={self._budget_user}, "
            f"max_items={self._max_items}, entries={len(self)}, "
            f"entry_bytes={self._total}, hits={self.hits}, misses={self.misses}>"
        )

    def __reduce__(self):
        state = {
            k: v for k, v in vars(self).items() if k not in vars(OrderedDict())
        }
        state.pop("_lock")
        return self.__class__, (), state, None, iter(list(super().items()))

    def __setstate__(self, state):
        # __reduce__ replays the items before the state, so keep their accounting
        sizes, total = self._sizes, self._total
        self.__dict__.update(state)
        self._lock = RLock()
        self._sizes, self._total = sizes, total

    def _forget(self, key):
        super().__delitem__(key)
        self._total -= self._sizes.pop(key)

    def _evict_over_limits(self):
        while self._max_items is not None and len(self) > self._max_items:
            self.delete_oldest_item()
        while self._budget is not None and self._total > self._budget:
            self.delete_oldest_item()

    def get(self, key, default=None):
        try:
            return self[key]
        except KeyError:
            return default

    def memoize(self, key, compute):
        """
        Cached value for key, calling compute() on a miss

        Values over the byte budget are returned but not stored.
        """
        with self._lock:
            if key in self:
                self.hits += 1
                return self[key]
            self.misses += 1
        value = compute()
        try:
            self[key] = value
        except DataTooLarge:
            logger.debug("MapCache: value for %r exceeds byte budget", key)
        return value

    def purge(self):
        with self._lock:
            super().clear()
            self._sizes.clear()
            self._total = 0
            self.hits = 0
            self.misses = 0

    def get_byte_size(self):
        """Summed deep size of all keys and values"""
        return self._total

    def change_byte_size(self, max_size_bytes):
        with self._lock:
            self._budget = _byte_budget(max_size_bytes)
            self._budget_user = max_size_bytes
            self._evict_over_limits()

    def change_max_items(self, max_items):
        with self._lock:
            self._max_items = _item_budget(max_items)
            self._evict_over_limits()

    def delete_oldest_item(self):
        with self._lock:
            if not len(self):
                raise KeyError("MapCache is empty")
            key = next(iter(self))
            value = super().__getitem__(key)
            logger.debug("MapCache: evicting %r", key)
            self._forget(key)
        if self.on_evict is not None:
            try:
                self.on_evict(key, value)
            except Exception as err:
                logger.warning("MapCache: on_evict hook raised %r", err)
