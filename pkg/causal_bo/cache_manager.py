"""
キャッシュマネージャー - 介入効果曲面とオラクル問い合わせの結果を保持する
"""
import hashlib
import logging
import threading
from collections import OrderedDict
from typing import Any, Dict, Hashable, Optional

from causal_bo.config import cache_config

logger = logging.getLogger(__name__)


def digest(*parts: Any) -> str:
    """キャッシュキー用のハッシュ値を作る"""
    text = "|".join(repr(p) for p in parts)
    return hashlib.md5(text.encode("utf-8")).hexdigest()


class LRUCache:
    """LRUキャッシュ実装（スレッドセーフ）"""

    def __init__(self, max_size: int = 100):
        self.max_size = max_size
        self._cache: "OrderedDict[Hashable, Any]" = OrderedDict()
        self._lock = threading.RLock()
        self._hits = 0
        self._misses = 0

    def get(self, key: Hashable) -> Optional[Any]:
        """キーの値を取得"""
        with self._lock:
            if key not in self._cache:
                self._misses += 1
                return None
            self._cache.move_to_end(key)
            self._hits += 1
            return self._cache[key]

    def put(self, key: Hashable, value: Any) -> None:
        """キーに値を設定"""
        with self._lock:
            if key in self._cache:
                self._cache[key] = value
                self._cache.move_to_end(key)
                return
            if len(self._cache) >= self.max_size:
                # 最古のアイテムを削除
                oldest_key, _ = self._cache.popitem(last=False)
                logger.debug(f"Evicted cache item: {oldest_key}")
            self._cache[key] = value

    def clear(self) -> None:
        """キャッシュをクリア"""
        with self._lock:
            self._cache.clear()
            self._hits = 0
            self._misses = 0

    def size(self) -> int:
        with self._lock:
            return len(self._cache)

    def hit_rate(self) -> float:
        """ヒット率を取得"""
        with self._lock:
            total = self._hits + self._misses
            return self._hits / total if total > 0 else 0.0

    def stats(self) -> Dict[str, Any]:
        """キャッシュ統計を取得"""
        with self._lock:
            return {
                "size": len(self._cache),
                "max_size": self.max_size,
                "hits": self._hits,
                "misses": self._misses,
                "hit_rate": self.hit_rate(),
            }


class CacheManager:
    """キャッシュマネージャー"""

    def __init__(self):
        self.surface_cache = LRUCache(max_size=cache_config.surface_cache_size)
        self.oracle_cache = LRUCache(max_size=cache_config.oracle_cache_size)

    def get_surface_value(self, key: Hashable) -> Optional[Any]:
        """曲面の評価値 (mean, second_moment) を取得"""
        if not cache_config.surface_cache_enabled:
            return None
        return self.surface_cache.get(key)

    def set_surface_value(self, key: Hashable, value: Any) -> None:
        if cache_config.surface_cache_enabled:
            self.surface_cache.put(key, value)

    def get_oracle(self, key: str) -> Optional[Any]:
        """オラクル結果を取得"""
        if not cache_config.oracle_cache_enabled:
            return None
        return self.oracle_cache.get(key)

    def set_oracle(self, key: str, value: Any) -> None:
        if cache_config.oracle_cache_enabled:
            self.oracle_cache.put(key, value)

    def clear_all(self) -> None:
        """全キャッシュをクリア"""
        self.surface_cache.clear()
        self.oracle_cache.clear()

    def stats(self) -> Dict[str, Any]:
        """キャッシュ統計を取得"""
        return {
            "surface_cache": self.surface_cache.stats(),
            "oracle_cache": self.oracle_cache.stats(),
        }


# グローバルキャッシュマネージャー
cache_manager = CacheManager()
