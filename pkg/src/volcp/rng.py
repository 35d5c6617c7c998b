"""Deterministic random streams.

Every stochastic object in the package draws from a Philox generator keyed
by ``(seed, *key)`` through :class:`numpy.random.SeedSequence`, so stream
``r`` of a run is the same no matter which worker computes it or in which
order.
"""

from __future__ import annotations

import os

import numpy as np

_MASK64 = (1 << 64) - 1

# stream tags, kept distinct so tables and replications never share draws
PATH_STREAM = 0
BRIDGE_STREAM = 1
ARGMAX_STREAM = 2
REPLICATION_STREAM = 3


def _entropy(seed: int) -> int:
    return int(seed) & _MASK64


def generator(seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator for ``seed`` and an optional integer key path."""
    ss = np.random.SeedSequence(_entropy(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *key: int) -> int:
    """Hash ``(seed, *key)`` to a fresh 64-bit seed."""
    ss = np.random.SeedSequence(_entropy(seed), spawn_key=tuple(int(k) for k in key))
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) << 32)


def worker_count(workers: int | None = None) -> int:
    """Resolve the worker count: explicit argument, else ``VOLCP_WORKERS``, else 1."""
    if workers is None:
        env = os.environ.get("VOLCP_WORKERS", "").strip()
        workers = int(env) if env else 1
    if workers < 1:
        raise ValueError(f"worker count must be >= 1, got {workers}")
    return workers
