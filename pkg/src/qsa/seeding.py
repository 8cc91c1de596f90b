"""Per-run seed derivation.

A run's seed is the first 8 bytes (little endian) of
``blake2b(f"{master}:{kind}:{index}", digest_size=8)``.  It depends only on
the master seed, the experiment kind and the run index, so scheduling runs
over any number of workers cannot change what a run sees.
"""

import hashlib

import numpy as np

MIXING_FUNCTION = "blake2b-64(master:kind:index)"


def derive_seed(master, kind, index):
    digest = hashlib.blake2b(f"{int(master)}:{kind}:{int(index)}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def run_rng(master, kind, index):
    return np.random.default_rng(derive_seed(master, kind, index))
