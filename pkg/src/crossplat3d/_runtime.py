"""Per-frame RNG streams and frame-parallel mapping."""
from __future__ import annotations

import hashlib
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np


def frame_rng(seed: int, frame_id: str, salt: str = "") -> np.random.Generator:
    """Generator keyed by (seed, frame_id, salt); independent of processing order."""
    digest = hashlib.sha256(f"{salt}\x00{frame_id}".encode()).digest()
    words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *words]))


def default_jobs() -> int:
    return os.cpu_count() or 1


def parallel_map(fn, items, jobs: int | None = None) -> list:
    """Order-preserving map; runs in-process when ``jobs`` is 1 or the work is tiny."""
    items = list(items)
    jobs = default_jobs() if jobs is None else max(1, int(jobs))
    if jobs == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))
