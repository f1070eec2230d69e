"""Seed derivation.

Every random stream in the package comes from a numpy ``PCG64`` generator
whose seed is derived by hashing a tuple of parts with SHA-256.  Both pieces
are platform independent, so the same parts give the same stream everywhere.
"""
import hashlib
import json

import numpy as np


def derive_seed(*parts) -> int:
    """Hash ``parts`` (ints, strings, ...) into a 64-bit unsigned seed."""
    text = "\x1f".join(repr(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def make_rng(*parts) -> np.random.Generator:
    if len(parts) == 1 and isinstance(parts[0], (int, np.integer)):
        return np.random.Generator(np.random.PCG64(int(parts[0])))
    return np.random.Generator(np.random.PCG64(derive_seed(*parts)))


def config_digest(obj, length: int = 12) -> str:
    """Short stable digest of a JSON-serialisable object."""
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:length]
