"""Reproducible random streams.

Every run gets its own 64-bit seed derived by hashing (master_seed, run_id),
so adding runs to a sweep never perturbs earlier ones. Within a run, each
(loop, purpose) pair gets an independent Philox substream: one loop's draws
never shift another's, and results are identical across platforms.
"""
from __future__ import annotations

import hashlib

import numpy as np

# Spawn-key codes for the per-loop substreams.
PURPOSES = {"noise": 0, "backoff": 1, "phase": 2}


def derive_run_seed(master_seed: int, run_id: int) -> int:
    """64-bit per-run seed: first 8 bytes of SHA-256 over 'master/run'."""
    digest = hashlib.sha256(f"{master_seed}/{run_id}".encode("ascii")).digest()
    return int.from_bytes(digest[:8], "big")


def substream(run_seed: int, loop_id: int, purpose: str) -> np.random.Generator:
    """Independent generator for one (loop, purpose) within a run."""
    try:
        code = PURPOSES[purpose]
    except KeyError:
        raise ValueError(f"unknown stream purpose {purpose!r}, expected one of {sorted(PURPOSES)}")
    seq = np.random.SeedSequence(entropy=run_seed, spawn_key=(loop_id, code))
    return np.random.Generator(np.random.Philox(seq))


def rng_stream(master_seed: int, run_id: int, loop_id: int, purpose: str) -> np.random.Generator:
    """Substream addressed by (master_seed, run_id, loop_id, purpose)."""
    return substream(derive_run_seed(master_seed, run_id), loop_id, purpose)
