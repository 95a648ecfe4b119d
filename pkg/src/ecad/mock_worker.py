"""Reference mock worker for the external-evaluator protocol.

Speaks the full wire contract over stdin/stdout against a real topology:
quality is the negated schedule cost (``neg-cost``, the default) or a
hash-derived value (``hash``). Fault-injection flags simulate worker death,
malformed output, duplicate responses, slow responses, and wrong handshake
versions, so the engine's retry and respawn paths can be tested end to end.

Run as ``python -m ecad.mock_worker --topology toy``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time

from .canonical import dumps
from .costmodel import schedule_cost
from .errors import EcadError
from .protocol import HELLO_NAME, PROTOCOL_VERSION, EvalResponse
from .schedule import CachingSchedule, unpack_bits
from .topology import load_topology


def hash_quality(bits_b64: str, seed: int) -> float:
    """Deterministic value in [-1, 1) from (bits, seed)."""
    digest = hashlib.sha256(f"{bits_b64}:{seed}".encode("ascii")).digest()
    return int.from_bytes(digest[:8], "big") / 2**63 - 1.0


def _error(request_id, code: str, message: str) -> str:
    return EvalResponse(request_id=request_id, error_code=code, error_message=message).to_line()


def _parse_request(line: str, topology_hash: str):
    """Returns (request_id, bits_b64, seed) or an error line string."""
    try:
        obj = json.loads(line)
    except json.JSONDecodeError:
        return _error(None, "bad_request", f"line is not JSON: {line[:80]!r}")
    if not isinstance(obj, dict):
        return _error(None, "bad_request", "request must be a JSON object")
    rid = obj.get("request_id")
    if not isinstance(rid, str):
        return _error(None, "bad_request", "request_id must be a string")
    if obj.get("protocol_version") != PROTOCOL_VERSION:
        return _error(rid, "bad_request", f"unsupported protocol_version {obj.get('protocol_version')!r}")
    params = obj.get("eval_params")
    if (
        not isinstance(params, dict)
        or not isinstance(params.get("prompt_set"), str)
        or not isinstance(params.get("images_per_prompt"), int)
        or not isinstance(params.get("seed"), int)
    ):
        return _error(rid, "bad_request", "eval_params needs prompt_set, images_per_prompt, seed")
    if obj.get("topology_hash") != topology_hash:
        return _error(rid, "topology_mismatch", f"worker is pinned to topology {topology_hash[:12]}")
    bits = obj.get("bits")
    if not isinstance(bits, str):
        return _error(rid, "bad_request", "bits must be a base64 string")
    return rid, bits, params["seed"]


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--topology", default="toy", help="builtin name or config path")
    parser.add_argument("--quality-mode", choices=("neg-cost", "hash"), default="neg-cost")
    parser.add_argument("--topology-hash", default=None, help="override the pinned topology hash")
    parser.add_argument("--handshake-version", type=int, default=PROTOCOL_VERSION)
    parser.add_argument("--die-after", type=int, default=0, help="exit abruptly after N responses")
    parser.add_argument("--malformed-at", type=int, default=0, help="emit garbage instead of response N")
    parser.add_argument("--duplicate-at", type=int, default=0, help="send response N twice")
    parser.add_argument("--sleep-s", type=float, default=0.0, help="delay before each response")
    args = parser.parse_args(argv)

    topology = load_topology(args.topology)
    pinned_hash = args.topology_hash or topology.topology_hash

    stdin, stdout = sys.stdin, sys.stdout

    def emit(line: str) -> None:
        stdout.write(line + "\n")
        stdout.flush()

    first = stdin.readline()
    if not first:
        return 0
    try:
        obj = json.loads(first)
        peer_version = obj.get("protocol_version") if isinstance(obj, dict) else None
        named_ok = isinstance(obj, dict) and obj.get("hello") == HELLO_NAME
    except json.JSONDecodeError:
        peer_version, named_ok = None, False
    if not named_ok or peer_version != PROTOCOL_VERSION:
        emit(_error(None, "bad_request", f"unsupported handshake: {first.strip()[:80]!r}"))
        return 2
    emit(dumps({"hello": HELLO_NAME, "protocol_version": args.handshake_version}))

    sent = 0
    for raw in stdin:
        line = raw.rstrip("\n")
        if not line:
            continue
        parsed = _parse_request(line, pinned_hash)
        if isinstance(parsed, str):
            response_line = parsed
        else:
            rid, bits_b64, seed = parsed
            if args.quality_mode == "hash":
                quality = hash_quality(bits_b64, seed)
            else:
                try:
                    bits = unpack_bits(bits_b64, topology.total_cells)
                except EcadError as exc:
                    emit(_error(rid, "bad_request", str(exc)))
                    continue
                quality = -schedule_cost(CachingSchedule(topology, bits)).total_tmacs
            response_line = EvalResponse(request_id=rid, quality=quality).to_line()

        sent += 1
        if args.sleep_s > 0:
            time.sleep(args.sleep_s)
        if args.malformed_at and sent == args.malformed_at:
            emit("%% this is not a JSON response %%")
        else:
            emit(response_line)
            if args.duplicate_at and sent == args.duplicate_at:
                emit(response_line)
        if args.die_after and sent >= args.die_after:
            return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
