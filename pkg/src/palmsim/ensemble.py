"""Seed derivation and per-sample mapping over weighted ensembles."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from functools import partial

import numpy as np


def spawn_rngs(seed, n):
    """``n`` independent generators derived deterministically from ``seed``."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def child_seed(seed, *keys):
    """A reproducible integer seed for a named sub-stream of ``seed``."""
    ss = np.random.SeedSequence([int(seed)] + [int(k) for k in keys])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def weights(ensemble):
    return np.array([s.weight for s in ensemble], dtype=float)


def _apply(fn, pair):
    sample, seed_seq = pair
    return fn(sample, np.random.default_rng(seed_seq))


def map_with_rng(fn, ensemble, seed, threads=1):
    """Apply ``fn(sample, rng)`` to every sample with a derived per-sample stream.

    Results do not depend on ``threads``.
    """
    seqs = np.random.SeedSequence(seed).spawn(len(ensemble))
    pairs = list(zip(ensemble, seqs))
    if threads and threads > 1 and len(ensemble) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(partial(_apply, fn), pairs, chunksize=max(1, len(pairs) // (4 * threads))))
    return [_apply(fn, p) for p in pairs]
