"""Deterministic derivation of named random streams from a single root seed.

Every random draw in the library goes through :func:`stream`, keyed by a
root seed plus a path of stage names and indices.  Streams are independent
of each other and of the order in which they are created, which is what
makes per-dialog augmentation and per-epoch dropout order-independent.
"""

import hashlib

import numpy as np


def _digest(root_seed, path):
    h = hashlib.sha256()
    h.update(str(int(root_seed)).encode("utf-8"))
    for part in path:
        h.update(b"/")
        h.update(str(part).encode("utf-8"))
    return h.digest()


def derive_seed(root_seed, *path):
    """Collapse (root_seed, *path) into a stable non-negative 63-bit integer."""
    d = _digest(root_seed, path)
    return int.from_bytes(d[:8], "little") >> 1


def stream(root_seed, *path):
    """Counter-based generator for the stream named by ``path``.

    The same (seed, path) always yields the same draw sequence, on any
    platform, regardless of what other streams were used before.
    """
    key = np.frombuffer(_digest(root_seed, path)[:16], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
