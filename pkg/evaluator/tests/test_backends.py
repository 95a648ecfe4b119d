"""Unit tests for the scoring backends."""

import hashlib
import math

import pytest

from ecad_eval.backends import (
    BackendUnavailableError,
    MockBackend,
    PipelineBackend,
    cached_fraction,
    hash_unit,
)


def _params(seed: int) -> dict:
    return {"prompt_set": "toy", "images_per_prompt": 1, "seed": seed}


def test_hash_unit_matches_independent_recomputation():
    # Oracle: first 8 digest bytes, big endian, mapped onto [-1, 1).
    for bits, seed in [("AAAA", 0), ("//8=", 7), ("qrvM", 123456)]:
        digest = hashlib.sha256(f"{bits}:{seed}".encode("ascii")).digest()
        expect = int.from_bytes(digest[:8], "big") / float(2**63) - 1.0
        assert hash_unit(bits, seed) == expect


def test_hash_unit_golden_values():
    assert hash_unit("AAAA", 0) == 0.819243097160854
    assert hash_unit("//8=", 7) == 0.593454862191535
    assert hash_unit("qrvM", 123456) == -0.246849103792104


def test_hash_unit_range():
    for i in range(200):
        v = hash_unit("qrvM", i)
        assert -1.0 <= v < 1.0


def test_cached_fraction_values():
    assert cached_fraction("") == 0.0
    assert cached_fraction("AAAA") == 1.0  # all-zero bytes, everything reused
    assert cached_fraction("//8=") == 0.0  # all-one bytes, everything recomputed
    assert cached_fraction("Dw==") == 0.5  # 0x0f, half the bits set
    assert cached_fraction("qg==") == 0.5  # 0xaa


def test_cached_fraction_rejects_bad_base64():
    with pytest.raises(Exception):
        cached_fraction("not base64!!")


def test_mock_score_golden_values():
    mb = MockBackend()
    topo = "f" * 64
    assert mb.score("AAAA", topo, _params(0)) == 0.909621548580427
    assert mb.score("//8=", topo, _params(7)) == -0.2032725689042325
    assert mb.score("qrvM", topo, _params(123456)) == -0.20675788522938537


def test_mock_score_matches_stated_formula():
    mb = MockBackend()
    for bits, seed in [("AAAA", 3), ("Dw==", 9), ("qrvM", 0)]:
        got = mb.score(bits, "0" * 64, _params(seed))
        want = 0.5 * hash_unit(bits, seed) + 0.5 * (2.0 * cached_fraction(bits) - 1.0)
        assert got == want


def test_mock_score_bounded():
    mb = MockBackend()
    for seed in range(100):
        q = mb.score("qrvM", "0" * 64, _params(seed))
        assert -1.0 <= q < 1.0
        assert math.isfinite(q)


def test_mock_score_deterministic_and_seed_sensitive():
    mb = MockBackend()
    a = mb.score("AAAA", "0" * 64, _params(5))
    b = MockBackend().score("AAAA", "0" * 64, _params(5))
    assert a == b
    assert mb.score("AAAA", "0" * 64, _params(6)) != a


def test_mock_score_rewards_caching_at_fixed_hash_term():
    # Subtracting the hash term isolates the cache bonus, which must grow
    # with the reused fraction.
    mb = MockBackend()
    seed = 42
    bonus = {}
    for bits in ["//8=", "qg==", "AAAA"]:
        q = mb.score(bits, "0" * 64, _params(seed))
        bonus[bits] = q - 0.5 * hash_unit(bits, seed)
    assert bonus["//8="] < bonus["qg=="] < bonus["AAAA"]


def test_pipeline_backend_averages_all_pairs():
    calls = []

    def fake_pipeline(prompt, seed, bits):
        calls.append((prompt, seed, bits))
        return {"a": 0.1, "b": 0.3}[prompt] + seed

    backend = PipelineBackend(prompts=["a", "b"], seeds=[0, 1], pipeline=fake_pipeline)
    got = backend.score("AAAA", "0" * 64, _params(0))
    assert got == pytest.approx((0.1 + 0.3 + 1.1 + 1.3) / 4.0)
    assert sorted(calls) == [
        ("a", 0, "AAAA"),
        ("a", 1, "AAAA"),
        ("b", 0, "AAAA"),
        ("b", 1, "AAAA"),
    ]


def test_pipeline_backend_validates_inputs():
    with pytest.raises(ValueError):
        PipelineBackend(prompts=[], seeds=[0], pipeline=lambda *a: 0.0)
    with pytest.raises(ValueError):
        PipelineBackend(prompts=["a"], seeds=[], pipeline=lambda *a: 0.0)


def test_pipeline_backend_without_pipeline_is_unavailable():
    # Fails at construction, before any request could be accepted.
    with pytest.raises(BackendUnavailableError):
        PipelineBackend(prompts=["a"], seeds=[0])
