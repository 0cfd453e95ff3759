"""Small shared helpers: ordered thread mapping and seeded sub-streams."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

import numpy as np

T = TypeVar("T")
R = TypeVar("R")


def default_threads() -> int:
    return os.cpu_count() or 1


def parallel_map(fn: Callable[[T], R], items: Sequence[T], threads: int = 1) -> list[R]:
    """Map fn over items, preserving input order in the result.

    Workers only parallelize independent per-item computation; callers own
    any order-sensitive reduction, so results are identical for any thread
    count.
    """
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def subrng(seed: int, *keys: int) -> np.random.Generator:
    """Independent RNG substream keyed by (seed, *keys); stable across runs."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, *[int(k) & 0xFFFFFFFF for k in keys]])


def kahan_add(total: np.ndarray, comp: np.ndarray, value: np.ndarray) -> None:
    """One compensated-summation step, in place on (total, comp)."""
    y = value - comp
    t = total + y
    comp[...] = (t - total) - y
    total[...] = t


def unit_rows(x: np.ndarray, atol: float = 0.0) -> np.ndarray:
    """L2-normalize rows (or a single vector); rows with norm <= atol become zeros."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = np.atleast_2d(x)
    norms = np.linalg.norm(x2, axis=1)
    out = np.zeros_like(x2)
    ok = norms > atol
    out[ok] = x2[ok] / norms[ok, None]
    return out[0] if single else out
