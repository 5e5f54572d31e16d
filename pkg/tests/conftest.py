import os

import numpy as np
import pytest


@pytest.fixture(scope="session", autouse=True)
def reference_cache(tmp_path_factory):
    """Keep reference trajectories out of the user's cache unless one is configured."""
    if not os.environ.get("HAMPARAREAL_CACHE_DIR"):
        os.environ["HAMPARAREAL_CACHE_DIR"] = str(tmp_path_factory.mktemp("reference-cache"))
    yield os.environ["HAMPARAREAL_CACHE_DIR"]


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one line per acceptance criterion, printed at the end of the session
CRITERIA = {}


@pytest.fixture(scope="session")
def criteria():
    return CRITERIA


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(CRITERIA, key=lambda c: (int(c.split("-")[0]), c)):
        ok, detail = CRITERIA[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
