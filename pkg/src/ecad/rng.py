"""Seedable, splittable random number generation.

All stochastic behavior in the package flows through numpy PCG64 generators
created here. Child streams are derived by hashing string labels into the
parent seed, so every consumer (seeding, engine loop, per-candidate evaluation)
gets an independent stream that is reproducible from the single run seed.
"""

from __future__ import annotations

import hashlib

import numpy as np

RNG_ALGORITHM = "numpy-pcg64"

_U64 = 2**64


def make_rng(seed: int) -> np.random.Generator:
    if not 0 <= seed < _U64:
        raise ValueError(f"seed must be a u64, got {seed}")
    return np.random.Generator(np.random.PCG64(seed))


def derive_seed(seed: int, *labels: str) -> int:
    """Hash (seed, labels...) into a new u64 seed. Stable across runs and platforms."""
    h = hashlib.sha256()
    h.update(str(seed).encode("ascii"))
    for label in labels:
        h.update(b"\x00")
        h.update(label.encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "big")


def state_digest(rng: np.random.Generator) -> str:
    """sha256 over the generator's full internal state, for history records."""
    state = rng.bit_generator.state
    return hashlib.sha256(repr(sorted(_flatten(state))).encode("ascii")).hexdigest()


def get_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def set_state(rng: np.random.Generator, state: dict) -> None:
    rng.bit_generator.state = state


def _flatten(obj, prefix=""):
    if isinstance(obj, dict):
        for k, v in obj.items():
            yield from _flatten(v, f"{prefix}.{k}")
    else:
        yield (prefix, repr(obj))
