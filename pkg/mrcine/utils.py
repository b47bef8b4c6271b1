# Utility functions and shared container cache for the mrcine tools
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import numpy as np

from .container import Metadata, read_container

SPLITMIX_GAMMA = 0x9E3779B97F4A7C15
_MASK64 = (1 << 64) - 1

# In-memory cache of loaded containers keyed by resolved path
container_cache: Dict[str, Tuple[float, np.ndarray, Metadata]] = {}


def splitmix64(state: int) -> int:
    """One splitmix64 output for ``state``."""
    z = (state + SPLITMIX_GAMMA) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(base: int, *keys: int) -> int:
    """Derive an independent 64-bit seed from ``base`` and integer ``keys``.

    Each key is folded in as ``splitmix64(seed ^ splitmix64(key))`` so
    per-example seeds never depend on evaluation order.
    """
    seed = splitmix64(base & _MASK64)
    for key in keys:
        seed = splitmix64(seed ^ splitmix64(key & _MASK64))
    return seed


def load_cached(path: Union[str, Path]) -> Tuple[np.ndarray, Metadata]:
    """Get a container from the cache or read and cache it."""
    resolved = Path(path).resolve()
    cache_key = str(resolved)
    mtime = resolved.stat().st_mtime

    cached = container_cache.get(cache_key)
    if cached is not None and cached[0] == mtime:
        return cached[1], cached[2]

    array, metadata = read_container(resolved)
    array.setflags(write=False)
    container_cache[cache_key] = (mtime, array, metadata)
    return array, metadata


def format_array_info(name: str, array: np.ndarray) -> Dict[str, Any]:
    """Summarize an array for tool and manifest output."""
    info: Dict[str, Any] = {
        "name": name,
        "shape": list(array.shape),
        "dtype": str(array.dtype),
    }
    if array.size:
        magnitude = np.abs(array)
        info["max_abs"] = float(magnitude.max())
        info["l2_norm"] = float(np.linalg.norm(array.ravel()))
    return info
