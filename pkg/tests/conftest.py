import pytest

from sasadmm.data_io import gen_synthetic
from sasadmm.harness import reference_solution

_criteria = {}
_notes = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number")


def pytest_runtest_logreport(report):
    crit = getattr(report, "criterion", None)
    if crit is None:
        return
    n, title = crit
    passed, _ = _criteria.get(n, (True, title))
    if report.when == "call" or report.outcome == "failed":
        _criteria[n] = (passed and report.outcome == "passed", title)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        rep.criterion = tuple(mark.args)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        ok, title = _criteria[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {title}")
    for line in _notes:
        terminalreporter.write_line(f"  note: {line}")


@pytest.fixture
def note():
    """Record a measured value for the end-of-run summary."""
    return _notes.append


@pytest.fixture(scope="session")
def lasso():
    """The seeded 50-feature, 200-sample fused lasso with its reference solution."""
    prob, _ = gen_synthetic("fused-lasso", (50, 200), seed=0)
    reference_solution(prob)
    return prob
