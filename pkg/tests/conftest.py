import json
from pathlib import Path

import pytest

from ecad.topology import load_topology

DATA_DIR = Path(__file__).parent / "data" / "v1"

MOCK_WORKER = ["python3", "-m", "ecad.mock_worker", "--topology", "toy"]


@pytest.fixture(scope="session")
def toy_topology():
    return load_topology("toy")


@pytest.fixture(scope="session")
def pixart_topology():
    return load_topology("pixart-like")


@pytest.fixture(scope="session")
def flux_topology():
    return load_topology("flux-like")


@pytest.fixture(scope="session")
def toy_goldens():
    return json.loads((DATA_DIR / "toy_goldens.json").read_text("utf-8"))
