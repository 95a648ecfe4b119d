"""Shared fixtures for the worker tests.

The suite drives the worker both in-process (unit tests call ``serve`` on
string buffers) and as a subprocess through the engine's own conformance
machinery. The engine package is a test-time dependency only; the worker
itself speaks plain stdin/stdout JSON lines.
"""

import sys
from pathlib import Path

import pytest

from ecad.topology import load_topology

DATA_DIR = Path(__file__).parent / "data" / "v1"


def worker_cmd(*extra: str) -> list[str]:
    return [sys.executable, "-m", "ecad_eval", "--backend", "mock", *extra]


@pytest.fixture(scope="session")
def toy_topology():
    return load_topology("toy")


@pytest.fixture(scope="session")
def mock_cmd():
    """Worker command with no topology pin (pins to the first request)."""
    return worker_cmd()


@pytest.fixture(scope="session")
def pinned_cmd(toy_topology):
    """Worker command pinned to the toy topology hash."""
    return worker_cmd("--topology-hash", toy_topology.topology_hash)


@pytest.fixture(scope="session")
def golden_transcript_path():
    return DATA_DIR / "worker_transcript.jsonl"
