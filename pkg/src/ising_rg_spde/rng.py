"""Reproducible per-replica random streams.

Every replica owns a PCG64 generator seeded by a 64-bit avalanche mix of
``(master_seed, replica_index)``.  Ensemble results therefore do not depend on
how replicas are scheduled across worker threads.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

MASK64 = (1 << 64) - 1

# splitmix64 finalizer constants
MIX_CONSTANTS = {
    "golden_gamma": 0x9E3779B97F4A7C15,
    "mul1": 0xBF58476D1CE4E5B9,
    "mul2": 0x94D049BB133111EB,
    "shifts": (30, 27, 31),
}

THREADS_ENV = "ISING_RG_SPDE_THREADS"


def mix64(master_seed: int, index: int) -> int:
    """splitmix64 avalanche of ``master_seed`` advanced by ``index + 1`` gammas."""
    c = MIX_CONSTANTS
    z = (int(master_seed) + (int(index) + 1) * c["golden_gamma"]) & MASK64
    s1, s2, s3 = c["shifts"]
    z = ((z ^ (z >> s1)) * c["mul1"]) & MASK64
    z = ((z ^ (z >> s2)) * c["mul2"]) & MASK64
    return z ^ (z >> s3)


def replica_generator(master_seed: int, index: int) -> np.random.Generator:
    """Independent generator for one replica."""
    if not 0 <= int(master_seed) <= MASK64:
        raise ValueError("master_seed must be an unsigned 64-bit integer")
    return np.random.Generator(np.random.PCG64(mix64(master_seed, index)))


def mixing_manifest() -> dict:
    """Constants of the replica seed mixer, for run manifests."""
    c = MIX_CONSTANTS
    return {
        "algorithm": "splitmix64(master_seed + (replica_index + 1) * golden_gamma) -> PCG64",
        "golden_gamma": hex(c["golden_gamma"]),
        "mul1": hex(c["mul1"]),
        "mul2": hex(c["mul2"]),
        "shifts": list(c["shifts"]),
    }


def resolve_threads(threads: int | None = None) -> int:
    """Worker count from the argument, then the environment, then 1."""
    if threads is None:
        env = os.environ.get(THREADS_ENV)
        threads = int(env) if env else 1
    threads = int(threads)
    if threads < 1:
        raise ValueError("threads must be >= 1")
    return threads


def replica_blocks(n_replicas: int, block_size: int) -> list[range]:
    """Fixed partition of replica indices; independent of the thread count."""
    if n_replicas < 1:
        raise ValueError("need at least one replica")
    return [range(s, min(s + block_size, n_replicas)) for s in range(0, n_replicas, block_size)]


def map_blocks(func, blocks, threads: int | None = None) -> list:
    """Apply ``func`` to every block and return results in block order."""
    threads = resolve_threads(threads)
    if threads == 1 or len(blocks) == 1:
        return [func(b) for b in blocks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, blocks))
