import pickle
from unittest.mock import Mock, call

import pytest

from sle_armlab.constants import BYTES_PER_KIBIBYTE
from sle_armlab.exceptions import DataTooLarge
from sle_armlab.map_cache import MapCache
from sle_armlab.utils import get_deep_byte_size


def test_respects_max_items():
    cache = MapCache(max_items=2)
    cache[(0.0, 1.0)] = 1.0
    cache[(0.0, 2.0)] = 2.0
    cache[(0.0, 3.0)] = 3.0
    assert len(cache) == 2
    assert list(cache.keys()) == [(0.0, 2.0), (0.0, 3.0)]


def test_getting_item_resets_to_end():
    cache = MapCache(max_items=3)
    cache["a"] = 1
    cache["b"] = 2
    cache["c"] = 3
    _ = cache["a"]
    assert list(cache.keys()) == ["b", "c", "a"]


def test_delete_oldest_item():
    cache = MapCache()
    cache["a"] = 1
    cache["b"] = 2
    cache.delete_oldest_item()
    assert list(cache.keys()) == ["b"]
    cache.delete_oldest_item()
    with pytest.raises(KeyError):
        cache.delete_oldest_item()


def test_change_max_items_trims():
    cache = MapCache()
    for i in range(5):
        cache[i] = float(i)
    cache.change_max_items(2)
    assert list(cache.keys()) == [3, 4]


def test_memoize_counts_hits_and_misses():
    cache = MapCache()
    compute = Mock(return_value=1.5)
    assert cache.memoize((0.0, 4.59), compute) == 1.5
    assert cache.memoize((0.0, 4.59), compute) == 1.5
    compute.assert_called_once_with()
    assert cache.hits == 1
    assert cache.misses == 1


def test_memoize_skips_values_over_budget():
    cache = MapCache(max_size_bytes="1K")
    big = "x" * (2 * BYTES_PER_KIBIBYTE)
    assert cache.memoize("big", lambda: big) == big
    assert "big" not in cache


def test_too_large_value_raises():
    cache = MapCache(max_size_bytes="1K")
    with pytest.raises(DataTooLarge):
        cache["big"] = "x" * (2 * BYTES_PER_KIBIBYTE)


def test_change_byte_size_evicts():
    cache = MapCache(max_size_bytes="64K")
    for i in range(20):
        cache[i] = "x" * 512
    assert len(cache) == 20
    cache.change_byte_size("8K")
    assert 0 < len(cache) < 20
    assert cache.get_byte_size() <= 8 * BYTES_PER_KIBIBYTE


def test_byte_size_tracks_entries():
    cache = MapCache()
    assert cache.get_byte_size() == 0
    cache["a"] = "a" * 100
    cache["b"] = 2.0
    expected = sum(get_deep_byte_size(item) for item in ("a", "a" * 100, "b", 2.0))
    assert cache.get_byte_size() == expected

    cache["a"] = 1.0
    del cache["b"]
    assert cache.get_byte_size() == get_deep_byte_size("a") + get_deep_byte_size(1.0)
    cache.purge()
    assert cache.get_byte_size() == 0


def test_on_evict_called():
    hook = Mock(return_value=None)
    cache = MapCache(max_items=2, on_evict=hook)
    cache["a"] = 1
    cache["b"] = 2
    cache["c"] = 3
    cache["d"] = 4
    hook.assert_has_calls([call("a", 1), call("b", 2)])


def test_failing_on_evict_does_not_break_cache():
    def broken(key, value):
        raise Exception("hook failure")

    cache = MapCache(max_items=1, on_evict=broken)
    cache["a"] = 1
    cache["b"] = 2
    assert list(cache.keys()) == ["b"]


def test_purge():
    cache = MapCache()
    cache.memoize("a", lambda: 1)
    cache.purge()
    assert len(cache) == 0
    assert cache.misses == 0


def test_pickle_round_trip_renews_lock():
    cache = MapCache(max_items=3, max_size_bytes="1M")
    cache["a"] = 1.0
    cache["b"] = 2.0
    clone = pickle.loads(pickle.dumps(cache))
    assert list(clone.items()) == [("a", 1.0), ("b", 2.0)]
    assert clone._max_items == 3
    clone["c"] = 3.0
    clone["d"] = 4.0
    assert list(clone.keys()) == ["b", "c", "d"]
    assert clone.get_byte_size() == sum(
        get_deep_byte_size(k) + get_deep_byte_size(v) for k, v in clone.items()
    )


def test_repr_mentions_limits():
    cache = MapCache(max_items=7, max_size_bytes="1M")
    text = repr(cache)
    assert "max_items=7" in text
    assert "max_memory=1M" in text
