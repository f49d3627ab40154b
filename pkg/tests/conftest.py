import os

import numpy as np
import pytest

os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running end-to-end checks")


ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """Record ``(passed, detail)`` for an acceptance criterion number."""
    store = request.config.stash.setdefault(ACCEPTANCE, {})

    def record(number, passed, detail):
        line = f"criterion {number} {'PASS' if passed else 'FAIL'}: {detail}"
        store[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, config):
    store = config.stash.get(ACCEPTANCE, {})
    if store:
        terminalreporter.section("acceptance criteria")
        for number in sorted(store):
            terminalreporter.write_line(store[number])
