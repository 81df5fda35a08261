from __future__ import annotations

import pytest

from cpgkit import build_cpg, fixture, record
from cpgkit.simulator import Schedule, load_program, run

# sync order for T1.a -> T2.a -> T1.b
FIG1_SCHEDULE = Schedule(sync_order=(1, 1, 2, 2, 1, 1))

_criteria: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when not in ("setup", "call"):
        return
    n, title = mark.args
    status = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
    prev = _criteria.get(n)
    if report.when == "call" or status != "PASS":
        if prev is None or prev[1] != "FAIL":
            _criteria[n] = (title, status)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        title, status = _criteria[n]
        terminalreporter.write_line(f"criterion {n}: {status}  {title}")


@pytest.fixture(scope="session")
def fig1_program():
    return load_program(fixture("fig1"))


@pytest.fixture(scope="session")
def fig1_run(fig1_program):
    return run(fig1_program, FIG1_SCHEDULE)


@pytest.fixture(scope="session")
def fig1_rec(fig1_run):
    return record(fig1_run.trace)


@pytest.fixture(scope="session")
def fig1_cpg(fig1_rec):
    return build_cpg(fig1_rec)
