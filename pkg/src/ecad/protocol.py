"""External-evaluator wire protocol and worker pool.

Workers are subprocesses speaking newline-delimited JSON on stdin/stdout. The
engine opens each worker with a handshake line and expects the mirror line
back; afterwards every request line gets exactly one response line (success
with a finite ``quality``, or a typed error). Schedule bits travel as padded
standard base64 of the little-endian packed vector.

The pool enforces at-most-once effects per request id: duplicate responses are
logged and dropped, timeouts and worker deaths trigger respawn plus bounded
re-dispatch, and a request that exhausts its retries aborts the evaluation so
the orchestrator can leave a resumable checkpoint behind.
"""

from __future__ import annotations

import json
import logging
import math
import queue
import shlex
import subprocess
import threading
from dataclasses import dataclass
from typing import Sequence

from .canonical import dumps
from .costmodel import schedule_cost
from .errors import (
    EvalTimeoutError,
    EvaluationFailedError,
    HandshakeError,
    ProtocolError,
)
from .nsga2 import ObjectiveVector
from .rng import derive_seed
from .schedule import CachingSchedule, pack_bits
from .topology import ModelTopology

log = logging.getLogger("ecad.protocol")

PROTOCOL_VERSION = 1
HELLO_NAME = "ecad-eval"

ERROR_CODES = ("bad_request", "backend_error", "topology_mismatch")


def hello_line(version: int = PROTOCOL_VERSION) -> str:
    return dumps({"hello": HELLO_NAME, "protocol_version": version})


def parse_hello(line: str) -> int:
    """Validate a handshake line, returning the peer's protocol version."""
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise HandshakeError(f"handshake line is not JSON: {exc}", line=line) from exc
    if not isinstance(obj, dict) or obj.get("hello") != HELLO_NAME:
        raise HandshakeError(f"peer did not identify as {HELLO_NAME!r}", line=line)
    version = obj.get("protocol_version")
    if not isinstance(version, int):
        raise HandshakeError("handshake carries no integer protocol_version", line=line)
    return version


@dataclass(frozen=True)
class EvalRequest:
    request_id: str
    topology_hash: str
    bits: str  # base64-packed schedule bits
    prompt_set: str = "default"
    images_per_prompt: int = 1
    seed: int = 0

    def to_wire(self) -> dict:
        return {
            "protocol_version": PROTOCOL_VERSION,
            "request_id": self.request_id,
            "topology_hash": self.topology_hash,
            "bits": self.bits,
            "eval_params": {
                "prompt_set": self.prompt_set,
                "images_per_prompt": self.images_per_prompt,
                "seed": self.seed,
            },
        }

    def to_line(self) -> str:
        return dumps(self.to_wire())


@dataclass(frozen=True)
class EvalResponse:
    request_id: str | None
    quality: float | None = None
    detail: dict | None = None
    error_code: str | None = None
    error_message: str | None = None

    @property
    def is_error(self) -> bool:
        return self.error_code is not None

    @classmethod
    def from_line(cls, line: str) -> "EvalResponse":
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"malformed response line: {line!r}", line=line) from exc
        if not isinstance(obj, dict) or "request_id" not in obj:
            raise ProtocolError(f"response lacks request_id: {line!r}", line=line)
        rid = obj["request_id"]
        if rid is not None and not isinstance(rid, str):
            raise ProtocolError(f"request_id must be a string or null: {line!r}", line=line)
        if "error" in obj:
            err = obj["error"]
            if (
                not isinstance(err, dict)
                or not isinstance(err.get("code"), str)
                or not isinstance(err.get("message"), str)
            ):
                raise ProtocolError(f"error object needs code and message: {line!r}", line=line)
            return cls(request_id=rid, error_code=err["code"], error_message=err["message"])
        quality = obj.get("quality")
        if not isinstance(quality, (int, float)) or not math.isfinite(quality):
            raise ProtocolError(f"response quality must be finite: {line!r}", line=line)
        detail = obj.get("detail")
        if detail is not None and not isinstance(detail, dict):
            raise ProtocolError(f"detail must be a map: {line!r}", line=line)
        return cls(request_id=rid, quality=float(quality), detail=detail)

    def to_wire(self) -> dict:
        if self.is_error:
            return {
                "request_id": self.request_id,
                "error": {"code": self.error_code, "message": self.error_message},
            }
        obj = {"request_id": self.request_id, "quality": self.quality}
        if self.detail is not None:
            obj["detail"] = self.detail
        return obj

    def to_line(self) -> str:
        return dumps(self.to_wire())


class WorkerProcess:
    """One worker subprocess with line IO, timeouts, and a reader thread."""

    _EOF = object()

    def __init__(self, argv: Sequence[str], timeout_s: float):
        self.argv = list(argv)
        self.timeout_s = timeout_s
        self.proc = subprocess.Popen(
            self.argv,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            encoding="utf-8",
            bufsize=1,
        )
        self._lines: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _read_loop(self):
        try:
            for line in self.proc.stdout:
                self._lines.put(line.rstrip("\n"))
        except ValueError:
            pass
        self._lines.put(self._EOF)

    def send_line(self, line: str) -> None:
        try:
            self.proc.stdin.write(line + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError, ValueError) as exc:
            raise ProtocolError(f"worker stdin closed: {exc}") from exc

    def recv_line(self, timeout_s: float | None = None) -> str:
        try:
            item = self._lines.get(timeout=timeout_s or self.timeout_s)
        except queue.Empty:
            raise EvalTimeoutError(
                f"worker gave no response within {timeout_s or self.timeout_s}s"
            ) from None
        if item is self._EOF:
            raise ProtocolError("worker closed its stdout")
        return item

    def handshake(self) -> None:
        self.send_line(hello_line())
        version = parse_hello(self.recv_line())
        if version != PROTOCOL_VERSION:
            raise HandshakeError(
                f"worker speaks protocol_version {version}, engine speaks {PROTOCOL_VERSION}"
            )

    def request(self, req: EvalRequest, completed: set[str]) -> EvalResponse:
        """Send one request and read its response, skipping duplicate strays."""
        self.send_line(req.to_line())
        for _ in range(100):
            line = self.recv_line()
            resp = EvalResponse.from_line(line)
            if resp.request_id == req.request_id:
                return resp
            if resp.request_id is not None and resp.request_id in completed:
                log.warning(
                    "duplicate response for completed request %s ignored", resp.request_id
                )
                continue
            raise ProtocolError(
                f"response for unexpected request_id {resp.request_id!r} "
                f"while waiting on {req.request_id!r}",
                line=line,
            )
        raise ProtocolError("worker flooded the engine with duplicate responses")

    @property
    def alive(self) -> bool:
        return self.proc.poll() is None

    def wait_exit(self, timeout_s: float) -> int:
        return self.proc.wait(timeout=timeout_s)

    def kill(self) -> None:
        if self.proc.poll() is None:
            self.proc.kill()
        self.proc.wait()

    def close(self) -> None:
        try:
            if self.proc.stdin and not self.proc.stdin.closed:
                self.proc.stdin.close()
        except (BrokenPipeError, OSError):
            pass
        try:
            self.proc.wait(timeout=2.0)
        except subprocess.TimeoutExpired:
            self.kill()


_STOP = object()


class WorkerPool:
    """Fixed-size pool dispatching eval requests across worker subprocesses."""

    def __init__(
        self,
        worker_cmd: str | Sequence[str],
        workers: int = 1,
        timeout_s: float = 30.0,
        retries: int = 2,
    ):
        if workers < 1:
            raise ProtocolError(f"worker count must be >= 1, got {workers}")
        self.argv = shlex.split(worker_cmd) if isinstance(worker_cmd, str) else list(worker_cmd)
        self.worker_count = workers
        self.timeout_s = timeout_s
        self.retries = retries
        self._slots: list[WorkerProcess | None] = [None] * workers

    def _ensure(self, slot: int) -> WorkerProcess:
        w = self._slots[slot]
        if w is None or not w.alive:
            if w is not None:
                w.kill()
            w = WorkerProcess(self.argv, self.timeout_s)
            w.handshake()
            self._slots[slot] = w
        return w

    def _drop(self, slot: int) -> None:
        w = self._slots[slot]
        if w is not None:
            w.kill()
        self._slots[slot] = None

    def evaluate(self, requests: Sequence[EvalRequest]) -> dict[str, EvalResponse]:
        """Answer every request exactly once or raise with the failing ids."""
        for slot in range(self.worker_count):
            self._ensure(slot)  # surface handshake problems before dispatch

        tasks: queue.Queue = queue.Queue()
        for req in requests:
            tasks.put((req, self.retries))
        lock = threading.Lock()
        state = {"remaining": len(requests)}
        results: dict[str, EvalResponse] = {}
        completed: set[str] = set()
        failed: list[tuple[str, str]] = []
        fatal: list[Exception] = []
        stop = threading.Event()

        def finish_one():
            with lock:
                state["remaining"] -= 1
                if state["remaining"] == 0:
                    for _ in range(self.worker_count):
                        tasks.put(_STOP)

        def work(slot: int):
            while True:
                task = tasks.get()
                if task is _STOP:
                    return
                req, budget = task
                if stop.is_set():
                    finish_one()
                    continue
                try:
                    worker = self._ensure(slot)
                except (HandshakeError, OSError) as exc:
                    with lock:
                        fatal.append(exc if isinstance(exc, Exception) else ProtocolError(str(exc)))
                    stop.set()
                    finish_one()
                    continue
                try:
                    resp = worker.request(req, completed)
                except ProtocolError as exc:
                    self._drop(slot)  # worker state unknown; respawn on next task
                    if budget > 0:
                        log.warning(
                            "request %s failed (%s); %d retries left",
                            req.request_id,
                            exc,
                            budget,
                        )
                        tasks.put((req, budget - 1))
                        continue
                    with lock:
                        failed.append((req.request_id, str(exc)))
                    stop.set()
                    finish_one()
                    continue
                if resp.is_error:
                    if budget > 0:
                        log.warning(
                            "request %s answered with error %s (%s); %d retries left",
                            req.request_id,
                            resp.error_code,
                            resp.error_message,
                            budget,
                        )
                        tasks.put((req, budget - 1))
                        continue
                    with lock:
                        failed.append(
                            (req.request_id, f"{resp.error_code}: {resp.error_message}")
                        )
                    stop.set()
                    finish_one()
                    continue
                with lock:
                    results[req.request_id] = resp
                    completed.add(req.request_id)
                finish_one()

        if not requests:
            return {}
        threads = [
            threading.Thread(target=work, args=(slot,), daemon=True)
            for slot in range(self.worker_count)
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        if fatal:
            raise fatal[0]
        if failed:
            ids = [rid for rid, _ in failed]
            detail = "; ".join(f"{rid[:12]}: {msg}" for rid, msg in failed)
            raise EvaluationFailedError(
                f"{len(failed)} candidate(s) failed after retries: {detail}", failed_ids=ids
            )
        return results

    def close(self) -> None:
        for slot in range(self.worker_count):
            w = self._slots[slot]
            if w is not None:
                w.close()
            self._slots[slot] = None

    def __enter__(self) -> "WorkerPool":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class ExternalEvaluator:
    """Engine-facing evaluator backed by a worker pool.

    Cost comes from the local analytical model; the wire carries only quality
    (higher is better). The sign flip onto minimized quality_loss happens here
    and nowhere else. Per-candidate seeds are derived from (run seed, schedule
    hash), so objectives do not depend on dispatch order or worker count.
    """

    def __init__(
        self,
        topology: ModelTopology,
        worker_cmd: str | Sequence[str],
        workers: int = 1,
        timeout_s: float = 30.0,
        retries: int = 2,
        prompt_set: str = "default",
        images_per_prompt: int = 1,
        run_seed: int = 0,
    ):
        self.topology = topology
        self.prompt_set = prompt_set
        self.images_per_prompt = images_per_prompt
        self.run_seed = run_seed
        self.pool = WorkerPool(worker_cmd, workers=workers, timeout_s=timeout_s, retries=retries)

    def evaluate(self, schedules: Sequence[CachingSchedule]) -> list[ObjectiveVector]:
        requests = []
        for s in schedules:
            sched_hash = s.schedule_hash
            requests.append(
                EvalRequest(
                    request_id=sched_hash,
                    topology_hash=self.topology.topology_hash,
                    bits=pack_bits(s.bits),
                    prompt_set=self.prompt_set,
                    images_per_prompt=self.images_per_prompt,
                    seed=derive_seed(self.run_seed, "eval", sched_hash),
                )
            )
        responses = self.pool.evaluate(requests)
        out = []
        for s, req in zip(schedules, requests):
            resp = responses[req.request_id]
            out.append(
                ObjectiveVector(
                    cost_tmacs=schedule_cost(s).total_tmacs,
                    quality_loss=-float(resp.quality),
                )
            )
        return out

    def close(self) -> None:
        self.pool.close()

    def __enter__(self) -> "ExternalEvaluator":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
