"""
Pytest configuration for the csev evidence project.
Puts the project root on sys.path and provides shared fixtures: default
params, the fixed-seed signer, the golden event and scratch workspaces.
"""
import os
import sys
from pathlib import Path

import pytest

# Add the project root to Python path
project_root = Path(__file__).parent.parent
if str(project_root) not in sys.path:
    sys.path.insert(0, str(project_root))

os.environ.setdefault("CSEV_LOG_FILE", str(project_root / "tests" / "test_run.log"))

from core import keygen, setup  # noqa: E402
from tests.helpers import make_golden_event  # noqa: E402


@pytest.fixture(scope="session")
def params():
    return setup(8)


@pytest.fixture(scope="session")
def keypair():
    return keygen(bytes(range(32)))


@pytest.fixture(scope="session")
def other_keypair():
    return keygen(bytes(range(1, 33)))


@pytest.fixture
def golden_event():
    return make_golden_event()


@pytest.fixture
def workspace(tmp_path, monkeypatch):
    """Empty working directory with no CSEV_* overrides leaking in from the host."""
    for name in ("PARAMS", "KEY", "LOG", "EVENT_STORE", "ANCHOR", "THREADS", "OUTPUT"):
        monkeypatch.delenv(f"CSEV_{name}", raising=False)
    monkeypatch.chdir(tmp_path)
    return tmp_path
