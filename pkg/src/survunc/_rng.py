"""Named seed derivation.

Every random sub-computation takes its seed from ``derive_seed(root, *keys)``
so results never depend on execution order or worker count.
"""

import hashlib

import numpy as np


def derive_seed(seed, *keys):
    """Stable 63-bit integer seed from a root seed and a path of keys."""
    h = hashlib.blake2b(digest_size=8)
    h.update(repr((int(seed),) + tuple(str(k) for k in keys)).encode())
    return int.from_bytes(h.digest(), "little") >> 1


def rng_for(seed, *keys):
    return np.random.default_rng(derive_seed(seed, *keys))
