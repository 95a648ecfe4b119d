"""End-to-end checks: the worker subprocess against the engine's own
conformance suite, transcript replay, and worker-pool integration."""

import json
from importlib.metadata import requires

from ecad.conformance import (
    record_transcript,
    replay_transcript,
    run_conformance_suite,
)
from ecad.protocol import EvalRequest, WorkerPool
from ecad.schedule import pack_bits
from ecad.seeding import fora_schedule, max_cached_schedule

from ecad_eval.backends import MockBackend

EXPECTED_CASES = {
    "handshake",
    "request_roundtrip",
    "deterministic_responses",
    "bad_request_on_malformed_line",
    "version_mismatch_rejected",
    "topology_mismatch_error",
    "golden_transcript",
}


def test_engine_conformance_suite_passes(toy_topology, pinned_cmd, golden_transcript_path):
    bits = pack_bits(fora_schedule(toy_topology, 2).bits)
    results = run_conformance_suite(
        pinned_cmd,
        toy_topology.topology_hash,
        bits,
        transcript_path=golden_transcript_path,
    )
    assert {c.name for c in results} == EXPECTED_CASES
    failures = [(c.name, c.detail) for c in results if not c.passed]
    assert failures == []


def test_checked_in_transcript_replays_byte_for_byte(pinned_cmd, golden_transcript_path):
    compared = replay_transcript(pinned_cmd, golden_transcript_path)
    # handshake + five golden requests + malformed line + mismatched hash
    assert compared == 8


def test_re_recording_reproduces_the_checked_in_bytes(
    pinned_cmd, golden_transcript_path, tmp_path
):
    steps = [
        json.loads(line)
        for line in golden_transcript_path.read_text("utf-8").splitlines()
        if line
    ]
    sends = [s["line"] for s in steps if s["direction"] == "send"]
    fresh = tmp_path / "fresh_transcript.jsonl"
    record_transcript(pinned_cmd, sends, fresh)
    assert fresh.read_bytes() == golden_transcript_path.read_bytes()


def test_worker_pool_answers_match_in_process_backend(toy_topology, mock_cmd):
    topo_hash = toy_topology.topology_hash
    schedules = [fora_schedule(toy_topology, n) for n in (1, 2, 3, 4)]
    schedules.append(max_cached_schedule(toy_topology))
    requests = [
        EvalRequest(
            request_id=f"pool-{i}",
            topology_hash=topo_hash,
            bits=pack_bits(s.bits),
            prompt_set="integration",
            images_per_prompt=2,
            seed=100 + i,
        )
        for i, s in enumerate(schedules)
    ]
    with WorkerPool(mock_cmd, workers=2) as pool:
        responses = pool.evaluate(requests)

    assert sorted(responses) == sorted(r.request_id for r in requests)
    backend = MockBackend()
    for req in requests:
        resp = responses[req.request_id]
        assert not resp.is_error
        want = backend.score(
            req.bits,
            topo_hash,
            {
                "prompt_set": req.prompt_set,
                "images_per_prompt": req.images_per_prompt,
                "seed": req.seed,
            },
        )
        # exact: the quality crosses the wire as JSON repr, which round-trips
        assert resp.quality == want


def test_package_declares_no_runtime_dependencies():
    reqs = requires("ecad-eval") or []
    runtime = [r for r in reqs if "extra" not in r]
    assert runtime == []
