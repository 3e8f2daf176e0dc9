"""Seed derivation, ordered parallel mapping, and text formatting helpers."""

from __future__ import annotations

import hashlib
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence

import numpy as np


def derive_seed(master: int, *names: object) -> int:
    """Derive a named sub-stream seed from the master seed.

    Stable across runs, platforms, and thread counts, so any stage can be
    re-run in isolation and reproduce its randomness.
    """
    h = hashlib.sha256()
    h.update(str(int(master)).encode())
    for name in names:
        h.update(b"/")
        h.update(str(name).encode())
    return int.from_bytes(h.digest()[:8], "big")


def rng_for(master: int, *names: object) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *names))


def resolve_threads(threads: int | None) -> int:
    """CLI --threads wins, then GEMID_THREADS, then 1."""
    if threads is not None and threads >= 1:
        return threads
    env = os.environ.get("GEMID_THREADS", "")
    if env.isdigit() and int(env) >= 1:
        return int(env)
    return 1


def ordered_map(fn: Callable, items: Sequence, threads: int = 1) -> list:
    """Map fn over items, possibly in parallel, preserving input order.

    Results are identical for any thread count; callers must not share
    mutable state between work items.
    """
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def fmt_cell(value) -> str:
    """Render one CSV cell: missing -> empty, floats via repr (round-trip exact)."""
    if value is None:
        return ""
    if isinstance(value, float):
        if np.isnan(value):
            return ""
        return repr(value)
    if isinstance(value, (np.floating,)):
        v = float(value)
        return "" if np.isnan(v) else repr(v)
    if isinstance(value, (np.integer,)):
        return str(int(value))
    return str(value)


def write_csv(path, header: Iterable[str], rows: Iterable[Sequence]) -> None:
    """Plain deterministic CSV writer (no quoting needs beyond commas)."""
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(header))
        for row in rows:
            writer.writerow([fmt_cell(v) for v in row])
