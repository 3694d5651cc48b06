from pathlib import Path

import pytest

from breathline.simulate import ScenarioConfig, generate

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def scenario_12bpm():
    return generate(ScenarioConfig(rate_bpm=12.0, seed=7))


ACCEPTANCE_RESULTS: dict = {}


def pytest_runtest_makereport(item, call):
    crit = item.get_closest_marker("criterion")
    if crit is None or call.when != "call":
        return
    key = crit.args[0]
    ok = call.excinfo is None
    prev = ACCEPTANCE_RESULTS.get(key, (True, crit.args[1]))
    ACCEPTANCE_RESULTS[key] = (prev[0] and ok, crit.args[1])


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS):
        ok, title = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {key}: {title}")
