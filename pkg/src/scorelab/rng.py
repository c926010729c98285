"""Deterministic counter-based random number generation.

Every stochastic routine in the package draws from a Philox generator keyed
by a single 64-bit root seed plus an integer split path, e.g.

    rng = spawn(seed, t_index, probe_index)

Philox is counter-based, so streams for distinct paths are independent and
reproducible regardless of execution order; the same (seed, path) always
yields the same stream.  Worker pools therefore never share generator state.
"""

from __future__ import annotations

import numpy as np

__all__ = ["spawn"]


def spawn(seed: int, *path: int) -> np.random.Generator:
    """Return a Generator for the stream identified by ``(seed, *path)``.

    Splitting is done through SeedSequence spawn keys, which guarantees
    non-overlapping streams for distinct paths under a fixed root seed.
    """
    if not isinstance(seed, (int, np.integer)):
        raise TypeError(f"seed must be an integer, got {type(seed).__name__}")
    ss = np.random.SeedSequence(entropy=int(seed) & 0xFFFFFFFFFFFFFFFF,
                                spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))
