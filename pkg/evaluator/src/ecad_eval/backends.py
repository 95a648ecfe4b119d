"""Quality backends for the evaluation worker.

A backend turns one request into one quality score. The mock backend is pure
arithmetic over the request payload, so protocol plumbing can be integration
tested without any model dependencies. The pipeline backend documents where a
real diffusion pipeline plus reward scorer would attach.
"""

from __future__ import annotations

import base64
import hashlib
from typing import Callable, Protocol, Sequence


class BackendUnavailableError(RuntimeError):
    """Raised at construction when a backend's dependencies are missing."""


class EvaluatorBackend(Protocol):
    name: str

    def score(self, bits_b64: str, topology_hash: str, eval_params: dict) -> float: ...


def hash_unit(bits_b64: str, seed: int) -> float:
    """Deterministic value in [-1, 1) from (schedule payload, seed)."""
    digest = hashlib.sha256(f"{bits_b64}:{seed}".encode("ascii")).digest()
    return int.from_bytes(digest[:8], "big") / 2**63 - 1.0


def cached_fraction(bits_b64: str) -> float:
    """Fraction of zero bits in the packed payload.

    The payload length is not carried on the wire, so trailing pad bits in the
    final byte count as cached. The pad is constant for a fixed schedule
    length, which keeps comparisons between same-length schedules monotone.
    """
    raw = base64.b64decode(bits_b64, validate=True)
    if not raw:
        return 0.0
    recomputed = sum(byte.bit_count() for byte in raw)
    return 1.0 - recomputed / (8 * len(raw))


class MockBackend:
    """Bounded deterministic score: hash-derived value plus a cache bonus.

    quality = 0.5 * hash_unit(bits, seed) + 0.5 * (2 * cached_fraction - 1),
    always in [-1, 1), strictly increasing in the cached fraction for a fixed
    hash term, and reproducible from (bits, eval_params.seed) alone.
    """

    name = "mock"

    def score(self, bits_b64: str, topology_hash: str, eval_params: dict) -> float:
        unit = hash_unit(bits_b64, eval_params["seed"])
        return 0.5 * unit + 0.5 * (2.0 * cached_fraction(bits_b64) - 1.0)


class PipelineBackend:
    """Scores a schedule by running a generation pipeline over prompts x seeds.

    The pipeline callable receives (prompt, seed, bits_b64), applies the bit
    schedule as per-component cache gates during its forward passes, and
    returns one reward score; ``score`` averages over every prompt and seed.
    Hook wiring into a concrete pipeline library is deployment-specific and is
    intentionally left to the caller. Constructing this backend without a
    pipeline fails immediately so a missing installation can never degrade
    into a silent fallback.
    """

    name = "pipeline"

    def __init__(
        self,
        prompts: Sequence[str],
        seeds: Sequence[int],
        pipeline: Callable[[str, int, str], float] | None = None,
    ):
        if not prompts:
            raise ValueError("prompt list is empty")
        if not seeds:
            raise ValueError("seed list is empty")
        if pipeline is None:
            raise BackendUnavailableError(
                "no generation pipeline installed; pass pipeline=... wired to a "
                "diffusion pipeline and reward scorer"
            )
        self.prompts = list(prompts)
        self.seeds = list(seeds)
        self.pipeline = pipeline

    def score(self, bits_b64: str, topology_hash: str, eval_params: dict) -> float:
        scores = [
            self.pipeline(prompt, seed, bits_b64)
            for prompt in self.prompts
            for seed in self.seeds
        ]
        return sum(scores) / len(scores)
