"""Named random streams on top of numpy's counter-based Philox generator.

A stream is addressed by a root seed plus a path of names, e.g.
``stream(3, "graph_bench", "pqe-lh", "init")``.  Streams with different
paths are statistically independent, so adding a new consumer never shifts
the draws of an existing one.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["stream", "path_key"]


def path_key(*names) -> list[int]:
    """Stable 32-bit words derived from a name path (independent of PYTHONHASHSEED)."""
    digest = hashlib.sha256("\x1f".join(map(str, names)).encode()).digest()
    return [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]


def stream(seed: int, *names) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *path_key(*names)])
    return np.random.Generator(np.random.Philox(ss))
