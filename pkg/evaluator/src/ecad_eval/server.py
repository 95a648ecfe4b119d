"""Line-oriented evaluation worker.

Speaks newline-delimited JSON over stdin/stdout: the engine opens with a hello
line, the worker replies with its own, then every request line earns exactly
one response line carrying the same request_id. Faults map to typed error
responses ("bad_request", "topology_mismatch", "backend_error"); an
unsupported handshake earns one error response and a nonzero exit.

Run as ``python -m ecad_eval --backend mock``.
"""

from __future__ import annotations

import argparse
import base64
import binascii
import json
import sys
from typing import TextIO

from .backends import EvaluatorBackend, MockBackend

PROTOCOL_VERSION = 1
HELLO_NAME = "ecad-eval"


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def hello_line() -> str:
    return _dumps({"hello": HELLO_NAME, "protocol_version": PROTOCOL_VERSION})


def error_line(request_id: str | None, code: str, message: str) -> str:
    return _dumps({"request_id": request_id, "error": {"code": code, "message": message}})


def result_line(request_id: str, quality: float) -> str:
    return _dumps({"request_id": request_id, "quality": quality})


def parse_request(line: str, pinned_hash: str | None):
    """Validate one request line.

    Returns (request_id, topology_hash, bits_b64, eval_params) on success or
    a ready-to-send error line string. ``pinned_hash`` of None accepts any
    topology hash (the caller pins to the first one seen).
    """
    try:
        obj = json.loads(line)
    except json.JSONDecodeError:
        return error_line(None, "bad_request", f"line is not JSON: {line[:80]!r}")
    if not isinstance(obj, dict):
        return error_line(None, "bad_request", "request must be a JSON object")
    rid = obj.get("request_id")
    if not isinstance(rid, str):
        return error_line(None, "bad_request", "request_id must be a string")
    if obj.get("protocol_version") != PROTOCOL_VERSION:
        return error_line(
            rid, "bad_request", f"unsupported protocol_version {obj.get('protocol_version')!r}"
        )
    params = obj.get("eval_params")
    if (
        not isinstance(params, dict)
        or not isinstance(params.get("prompt_set"), str)
        or not isinstance(params.get("images_per_prompt"), int)
        or not isinstance(params.get("seed"), int)
    ):
        return error_line(
            rid, "bad_request", "eval_params needs prompt_set, images_per_prompt, seed"
        )
    topo = obj.get("topology_hash")
    if not isinstance(topo, str):
        return error_line(rid, "bad_request", "topology_hash must be a string")
    if pinned_hash is not None and topo != pinned_hash:
        return error_line(
            rid, "topology_mismatch", f"worker is pinned to topology {pinned_hash[:12]}"
        )
    bits = obj.get("bits")
    if not isinstance(bits, str):
        return error_line(rid, "bad_request", "bits must be a base64 string")
    try:
        base64.b64decode(bits, validate=True)
    except (binascii.Error, ValueError):
        return error_line(rid, "bad_request", "bits is not valid base64")
    return rid, topo, bits, params


def serve(
    backend: EvaluatorBackend,
    stdin: TextIO,
    stdout: TextIO,
    topology_hash: str | None = None,
) -> int:
    """Run the request loop until EOF; returns the process exit code."""

    def emit(line: str) -> None:
        stdout.write(line + "\n")
        stdout.flush()

    first = stdin.readline()
    if not first:
        return 0
    try:
        obj = json.loads(first)
        named_ok = isinstance(obj, dict) and obj.get("hello") == HELLO_NAME
        peer_version = obj.get("protocol_version") if isinstance(obj, dict) else None
    except json.JSONDecodeError:
        named_ok, peer_version = False, None
    if not named_ok or peer_version != PROTOCOL_VERSION:
        emit(error_line(None, "bad_request", f"unsupported handshake: {first.strip()[:80]!r}"))
        return 2
    emit(hello_line())

    pinned = topology_hash
    for raw in stdin:
        line = raw.rstrip("\n")
        if not line:
            continue
        parsed = parse_request(line, pinned)
        if isinstance(parsed, str):
            emit(parsed)
            continue
        rid, topo, bits, params = parsed
        if pinned is None:
            pinned = topo
        try:
            quality = float(backend.score(bits, topo, params))
        except Exception as exc:  # noqa: BLE001 - backend faults become responses
            emit(error_line(rid, "backend_error", f"{type(exc).__name__}: {exc}"))
            continue
        emit(result_line(rid, quality))
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="ecad_eval", description=__doc__)
    parser.add_argument(
        "--backend",
        choices=["mock"],
        default="mock",
        help="quality backend (mock: deterministic arithmetic, no model dependencies)",
    )
    parser.add_argument(
        "--topology-hash",
        default=None,
        help="reject requests for any other topology; default pins to the first request",
    )
    args = parser.parse_args(argv)
    backend = MockBackend()
    return serve(backend, sys.stdin, sys.stdout, topology_hash=args.topology_hash)
