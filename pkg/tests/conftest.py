import pytest

from tubehom.config import from_dict
from tubehom.harness import sweep

ACCEPTANCE_LINES: list[str] = []


def record(criterion: int, title: str, ok: bool, detail: str = "") -> None:
    line = f"criterion {criterion:2d} {'PASS' if ok else 'FAIL'}  {title}"
    if detail:
        line += f"  [{detail}]"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def circle_config():
    return from_dict({"curve": {"kind": "circle", "radius": 1.0}})


@pytest.fixture(scope="session")
def circle_sweep(circle_config):
    """The default homogenization sweep on the unit circle (shared by several criteria)."""
    return sweep(circle_config)


@pytest.fixture(scope="session")
def small_circle_config():
    return from_dict({"curve": {"kind": "circle"}, "grid": {"ns": 64, "nw": 41},
                      "epsilons": [0.4, 0.3, 0.2], "times": [0.5, 1.0],
                      "suites": {"regularity": False, "boundary": False, "uniform": True}})
