import pytest

from gpdsched.network import NetworkSpec
from gpdsched.objective import PenaltyConfig, ProblemSpec
from helpers import unit_mode


@pytest.fixture
def two_link_conflict():
    """Two conflicting unit links plus idle, powers (1, 1, 0)."""
    modes = [unit_mode(2, [0]), unit_mode(2, [1]), unit_mode(2, [])]
    return NetworkSpec.single_state(modes)


@pytest.fixture
def pen_problem():
    return ProblemSpec("average-power", ("rate-stability",), PenaltyConfig(2.0, 5e3, 1e-3))


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion, then assert it."""
    def record(name, ok, detail):
        line = f"{name} {'PASS' if ok else 'FAIL'}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][2:])):
            terminalreporter.write_line(line)
