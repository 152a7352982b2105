"""
Named random streams derived from a single 64-bit root seed.

A stream is identified by a path of names, e.g. `('test', 'board', 17)`; its seed is the first
8 bytes of BLAKE2b over the root seed and the '/'-joined path. Streams are independent of the
order in which they are created, so serial and parallel runs draw the same numbers.
"""
import hashlib
import secrets

import numpy as np

MAX_SEED = 2 ** 64 - 1


def new_root_seed() -> int:
    return secrets.randbits(64)


def derive_seed(root: int, *names) -> int:
    if not 0 <= root <= MAX_SEED:
        raise ValueError(f'Seed {root} out of the 64-bit range')
    digest = hashlib.blake2b(
        '/'.join(str(n) for n in names).encode('utf-8'),
        digest_size=8,
        key=root.to_bytes(8, 'little'),
    ).digest()
    return int.from_bytes(digest, 'little')


def make_rng(root: int, *names) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(root, *names)))
