import functools
from pathlib import Path

import pytest

import nonovershoot
from nonovershoot import sim
from nonovershoot.plant import load_scenario

SCENARIOS = Path(nonovershoot.__file__).parent / "scenarios"


def scenario(name: str, **changes):
    sc = load_scenario(SCENARIOS / f"{name}.toml")
    return sc.with_changes(**changes) if changes else sc


def _freeze(v):
    return tuple(v) if isinstance(v, list) else v


@functools.lru_cache(maxsize=None)
def _cached(name, frozen):
    changes = {k: (list(v) if isinstance(v, tuple) else v) for k, v in frozen}
    return sim.run(scenario(name, **changes))


def run_named(name: str, **changes):
    """``(trace, metrics)`` for a shipped scenario; memoized across the session."""
    return _cached(name, tuple(sorted((k, _freeze(v)) for k, v in changes.items())))


@pytest.fixture
def ex1():
    return scenario("ex1")


@pytest.fixture(scope="session")
def scenarios_dir():
    return SCENARIOS


# acceptance criteria register one line each; printed after the run
ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
