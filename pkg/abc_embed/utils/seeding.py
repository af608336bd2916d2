import hashlib

import numpy as np


def derive_seed(seed: int, *keys: object) -> int:
    """Stable 63-bit seed from a base seed and any number of keys."""
    payload = "\x1f".join([str(seed), *(str(k) for k in keys)]).encode("utf-8")
    return int.from_bytes(hashlib.sha256(payload).digest()[:8], "little") >> 1


def make_rng(seed: int, *keys: object) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *keys))
