"""Worker-side protocol conformance checks.

Runs any worker command through the wire contract: handshake, request/response
echo, response determinism, typed errors for malformed lines and mismatched
topology hashes, version-mismatch rejection, and byte-identical golden
transcript replay. The same suite exercises the built-in mock worker and any
out-of-tree evaluator implementation.
"""

from __future__ import annotations

import json
import subprocess
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .canonical import dumps
from .errors import ProtocolError
from .protocol import (
    HELLO_NAME,
    PROTOCOL_VERSION,
    EvalRequest,
    EvalResponse,
    WorkerProcess,
    hello_line,
)


@dataclass(frozen=True)
class ConformanceCase:
    name: str
    passed: bool
    detail: str = ""


def _fresh(worker_cmd: Sequence[str], timeout_s: float) -> WorkerProcess:
    return WorkerProcess(list(worker_cmd), timeout_s)


def _sample_request(topology_hash: str, bits_b64: str, request_id: str) -> EvalRequest:
    return EvalRequest(
        request_id=request_id,
        topology_hash=topology_hash,
        bits=bits_b64,
        prompt_set="conformance",
        images_per_prompt=1,
        seed=12345,
    )


def check_handshake(worker_cmd: Sequence[str], timeout_s: float = 10.0) -> None:
    w = _fresh(worker_cmd, timeout_s)
    try:
        w.handshake()
    finally:
        w.close()


def check_request_roundtrip(
    worker_cmd: Sequence[str], topology_hash: str, bits_b64: str, timeout_s: float = 10.0
) -> float:
    """Valid request gets a success response echoing its id; returns quality."""
    w = _fresh(worker_cmd, timeout_s)
    try:
        w.handshake()
        resp = w.request(_sample_request(topology_hash, bits_b64, "conformance-1"), set())
        if resp.is_error:
            raise ProtocolError(
                f"worker answered a valid request with error {resp.error_code}: "
                f"{resp.error_message}"
            )
        return float(resp.quality)
    finally:
        w.close()


def check_determinism(
    worker_cmd: Sequence[str], topology_hash: str, bits_b64: str, timeout_s: float = 10.0
) -> None:
    """The same request twice must produce byte-identical response lines."""
    w = _fresh(worker_cmd, timeout_s)
    try:
        w.handshake()
        req = _sample_request(topology_hash, bits_b64, "conformance-det")
        lines = []
        for _ in range(2):
            w.send_line(req.to_line())
            lines.append(w.recv_line())
        if lines[0] != lines[1]:
            raise ProtocolError(f"nondeterministic responses: {lines[0]!r} != {lines[1]!r}")
    finally:
        w.close()


def check_bad_request_on_malformed_line(
    worker_cmd: Sequence[str], timeout_s: float = 10.0
) -> None:
    w = _fresh(worker_cmd, timeout_s)
    try:
        w.handshake()
        w.send_line("this is not json {")
        resp = EvalResponse.from_line(w.recv_line())
        if resp.error_code != "bad_request":
            raise ProtocolError(
                f"malformed line answered with {resp.error_code!r}, expected 'bad_request'"
            )
    finally:
        w.close()


def check_version_mismatch_rejected(
    worker_cmd: Sequence[str], timeout_s: float = 10.0
) -> None:
    """An unknown protocol version must earn an error response and an exit."""
    w = _fresh(worker_cmd, timeout_s)
    try:
        w.send_line(dumps({"hello": HELLO_NAME, "protocol_version": PROTOCOL_VERSION + 41}))
        resp = EvalResponse.from_line(w.recv_line())
        if not resp.is_error:
            raise ProtocolError("worker accepted an unknown protocol version")
        try:
            w.wait_exit(timeout_s)
        except subprocess.TimeoutExpired:
            raise ProtocolError("worker kept running after rejecting the handshake") from None
    finally:
        w.close()


def check_topology_mismatch(
    worker_cmd: Sequence[str], bits_b64: str, timeout_s: float = 10.0
) -> None:
    w = _fresh(worker_cmd, timeout_s)
    try:
        w.handshake()
        req = _sample_request("0" * 64, bits_b64, "conformance-topo")
        resp = w.request(req, set())
        if resp.error_code != "topology_mismatch":
            raise ProtocolError(
                f"mismatched topology answered with {resp.error_code!r}, "
                f"expected 'topology_mismatch'"
            )
    finally:
        w.close()


# -- golden transcripts -----------------------------------------------------------


def record_transcript(
    worker_cmd: Sequence[str], send_lines: Sequence[str], path: str | Path, timeout_s: float = 10.0
) -> None:
    """Drive the worker with raw lines (one response expected per line) and
    save the send/recv interleaving for later byte-exact replay."""
    w = _fresh(worker_cmd, timeout_s)
    steps = []
    try:
        for line in send_lines:
            w.send_line(line)
            steps.append({"direction": "send", "line": line})
            steps.append({"direction": "recv", "line": w.recv_line()})
    finally:
        w.close()
    Path(path).write_text("".join(dumps(s) + "\n" for s in steps), "utf-8")


def replay_transcript(
    worker_cmd: Sequence[str], path: str | Path, timeout_s: float = 10.0
) -> int:
    """Replay a recorded transcript; every received line must match byte for
    byte. Returns the number of compared responses."""
    steps = [json.loads(line) for line in Path(path).read_text("utf-8").splitlines() if line]
    w = _fresh(worker_cmd, timeout_s)
    compared = 0
    try:
        for step in steps:
            if step["direction"] == "send":
                w.send_line(step["line"])
            else:
                got = w.recv_line()
                if got != step["line"]:
                    raise ProtocolError(
                        f"transcript divergence: expected {step['line']!r}, got {got!r}",
                        line=got,
                    )
                compared += 1
    finally:
        w.close()
    return compared


def default_transcript_lines(topology_hash: str, bits_variants: Sequence[str]) -> list[str]:
    """Standard transcript body: handshake, several valid requests, one
    malformed line, one mismatched topology hash."""
    lines = [hello_line()]
    for i, bits in enumerate(bits_variants):
        lines.append(_sample_request(topology_hash, bits, f"golden-{i}").to_line())
    lines.append("{ not even json")
    lines.append(_sample_request("f" * 64, bits_variants[0], "golden-mismatch").to_line())
    return lines


def run_conformance_suite(
    worker_cmd: Sequence[str],
    topology_hash: str,
    bits_b64: str,
    transcript_path: str | Path | None = None,
    timeout_s: float = 10.0,
) -> list[ConformanceCase]:
    """Run every check; raises nothing, reports pass/fail per case."""
    checks = [
        ("handshake", lambda: check_handshake(worker_cmd, timeout_s)),
        (
            "request_roundtrip",
            lambda: check_request_roundtrip(worker_cmd, topology_hash, bits_b64, timeout_s),
        ),
        (
            "deterministic_responses",
            lambda: check_determinism(worker_cmd, topology_hash, bits_b64, timeout_s),
        ),
        (
            "bad_request_on_malformed_line",
            lambda: check_bad_request_on_malformed_line(worker_cmd, timeout_s),
        ),
        (
            "version_mismatch_rejected",
            lambda: check_version_mismatch_rejected(worker_cmd, timeout_s),
        ),
        (
            "topology_mismatch_error",
            lambda: check_topology_mismatch(worker_cmd, bits_b64, timeout_s),
        ),
    ]
    if transcript_path is not None:
        checks.append(
            ("golden_transcript", lambda: replay_transcript(worker_cmd, transcript_path, timeout_s))
        )
    results = []
    for name, fn in checks:
        try:
            fn()
            results.append(ConformanceCase(name=name, passed=True))
        except Exception as exc:  # noqa: BLE001 - report, don't mask later cases
            results.append(ConformanceCase(name=name, passed=False, detail=str(exc)))
    return results
