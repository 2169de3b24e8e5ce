"""
In-memory caching for ground-truth density maps

Density maps depend only on (scene content, sigma, downsample, scale factor), so the
trainer builds each one once and reuses it every epoch. The cache is a
bounded LRU with hit/miss statistics.
"""

import hashlib
import logging
import threading
from collections import OrderedDict
from dataclasses import dataclass
from typing import Any, Callable, Dict, Optional, Sequence, Tuple

import numpy as np
from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


logger = logging.getLogger(__name__)


class CacheConfig(BaseSettings):
    """Cache configuration settings"""
    model_config = SettingsConfigDict(env_prefix="CACHE_", case_sensitive=False)

    enabled: bool = True
    max_entries: int = Field(default=4096, ge=1)


@dataclass
class CacheEntry:
    """Cache entry with access metadata"""
    value: Any
    access_count: int = 0


class CacheKeyBuilder:
    """Utility for building consistent cache keys"""

    @staticmethod
    def scene_digest(points: Sequence[Tuple[float, float]], image_shape: Tuple[int, ...]) -> str:
        """Short digest of the annotations and frame size a density map is built from"""
        digest = hashlib.sha1(repr(tuple(int(n) for n in image_shape)).encode())
        digest.update(np.asarray(points, dtype=np.float64).reshape(-1, 2).tobytes())
        return digest.hexdigest()[:16]

    @staticmethod
    def density_map(
        scene_id: str,
        sigma: float,
        downsample: int,
        scale_factor: float,
        digest: str = "",
    ) -> str:
        """
        Key for a ground-truth map

        Floats are keyed by repr so distinct values never collide; ``digest``
        (see ``scene_digest``) keeps scenes that share an id apart.
        """
        return f"dmap:{scene_id}:{digest}:{sigma!r}:{downsample}:{scale_factor!r}"


class MemoryCache:
    """Thread-safe bounded LRU cache"""

    def __init__(self, config: Optional[CacheConfig] = None):
        self.config = config or CacheConfig()
        self._entries: "OrderedDict[str, CacheEntry]" = OrderedDict()
        self._lock = threading.Lock()
        self._stats = {"hits": 0, "misses": 0, "sets": 0, "evictions": 0}

    def get(self, key: str) -> Optional[Any]:
        with self._lock:
            entry = self._entries.get(key)
            if entry is None:
                self._stats["misses"] += 1
                return None
            self._entries.move_to_end(key)
            entry.access_count += 1
            self._stats["hits"] += 1
            return entry.value

    def set(self, key: str, value: Any) -> None:
        if not self.config.enabled:
            return
        with self._lock:
            if key not in self._entries and len(self._entries) >= self.config.max_entries:
                evicted, _ = self._entries.popitem(last=False)
                self._stats["evictions"] += 1
                logger.debug(f"Evicted cache entry {evicted}")
            self._entries[key] = CacheEntry(value=value)
            self._entries.move_to_end(key)
            self._stats["sets"] += 1

    def get_or_compute(self, key: str, compute: Callable[[], Any]) -> Any:
        """Return the cached value or compute, store and return it"""
        value = self.get(key)
        if value is None:
            value = compute()
            self.set(key, value)
        return value

    def clear(self) -> None:
        with self._lock:
            self._entries.clear()

    def __len__(self) -> int:
        return len(self._entries)

    def get_stats(self) -> Dict[str, Any]:
        """Cache statistics including hit rate"""
        lookups = self._stats["hits"] + self._stats["misses"]
        return {
            **self._stats,
            "size": len(self._entries),
            "max_size": self.config.max_entries,
            "hit_rate": self._stats["hits"] / lookups if lookups else 0.0,
        }
