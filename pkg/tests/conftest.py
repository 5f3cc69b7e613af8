import numpy as np
import pytest

from merge_planner.synthetic import generate_dataset, generate_episode
from merge_planner.trajectory import AGGRESSIVE, NORMAL


@pytest.fixture(scope="session")
def dataset_202():
    """The paper-sized synthetic population: 99 aggressive and 103 normal episodes."""
    return generate_dataset(202, 0.49, seed=0)


@pytest.fixture(scope="session")
def normal_episode():
    return generate_episode(NORMAL, seed=11)


@pytest.fixture(scope="session")
def aggressive_episode():
    return generate_episode(AGGRESSIVE, seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def verdict(request):
    """Record and print the pass/fail line of one acceptance criterion, then assert it."""

    def _record(number: int, title: str, ok: bool, detail: str):
        line = f"criterion {number} [{title}]: {'PASS' if ok else 'FAIL'} ({detail})"
        request.config.stash.setdefault(ACCEPTANCE, {})[number] = line
        print(line)
        assert ok, line

    return _record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
