from __future__ import annotations

from causal_bo.cache_manager import CacheManager, LRUCache, digest
from causal_bo.config import cache_config


def test_lru_evicts_oldest():
    cache = LRUCache(max_size=2)
    cache.put("a", 1)
    cache.put("b", 2)
    assert cache.get("a") == 1
    cache.put("c", 3)
    assert cache.get("b") is None
    assert cache.get("a") == 1
    assert cache.size() == 2


def test_stats_count_hits_and_misses():
    cache = LRUCache(max_size=4)
    cache.put("k", "v")
    cache.get("k")
    cache.get("missing")
    stats = cache.stats()
    assert stats["hits"] == 1
    assert stats["misses"] == 1
    assert stats["hit_rate"] == 0.5


def test_digest_depends_on_every_part():
    assert digest("a", 1) == digest("a", 1)
    assert digest("a", 1) != digest("a", 2)
    assert digest(("B",), 0.5) != digest(("D",), 0.5)


def test_disabled_surface_cache(monkeypatch):
    manager = CacheManager()
    monkeypatch.setattr(cache_config, "surface_cache_enabled", False)
    manager.set_surface_value("key", (1.0, 2.0))
    assert manager.get_surface_value("key") is None
    assert manager.surface_cache.size() == 0


def test_clear_all():
    manager = CacheManager()
    manager.set_oracle("q", 1.5)
    manager.set_surface_value("s", (0.0, 1.0))
    manager.clear_all()
    assert manager.stats()["oracle_cache"]["size"] == 0
    assert manager.stats()["surface_cache"]["size"] == 0
