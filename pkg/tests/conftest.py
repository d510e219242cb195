import numpy as np
import pytest

from koopobs.models import get_model

_ACCEPTANCE: list[str] = []


@pytest.fixture
def acceptance_log():
    """Record one pass/fail line per acceptance criterion."""

    def record(criterion: str, passed: bool, detail: str = ""):
        line = f"[{'PASS' if passed else 'FAIL'}] {criterion}"
        if detail:
            line += f" :: {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def ex2():
    return get_model("example2")


@pytest.fixture(scope="session")
def undirected():
    return get_model("consensus-undirected")


@pytest.fixture(scope="session")
def directed():
    return get_model("consensus-directed")


@pytest.fixture(scope="session")
def nems():
    return get_model("nems-ring")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
