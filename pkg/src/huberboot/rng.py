"""Counter-based random streams keyed by integer tuples.

Every random draw in the package comes from ``substream(seed, *key)``: a Philox
generator whose state is a pure function of ``(seed, key)``.  Work can therefore be
scheduled in any order or on any number of threads without changing results.
"""

from __future__ import annotations

import numpy as np


def substream(seed: int, *key: int) -> np.random.Generator:
    """Return an independent Philox generator for ``(seed, *key)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *key: int) -> int:
    """Derive a 63-bit integer seed for a child task (e.g. one simulation replication)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
