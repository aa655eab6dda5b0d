import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

_LINES_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_LINES_KEY] = []


@pytest.fixture
def acceptance_log(request):
    """Append ``(criterion, passed, detail)``; echoed in the terminal summary."""
    lines = request.config.stash[_LINES_KEY]

    def record(criterion, passed, detail=""):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {detail}"
        lines.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split(":")[0].split(".")[0])):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_compositions(rng, n, p):
    return rng.dirichlet(np.ones(p), size=n)


def random_graph(rng, n, density=0.5, weighted=False):
    mask = np.triu(rng.random((n, n)) < density, 1)
    vals = rng.random((n, n)) + 0.1 if weighted else np.ones((n, n))
    r = np.where(mask, vals, 0.0)
    return r + r.T
