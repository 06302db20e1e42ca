"""Collects acceptance outcomes and prints one PASS/FAIL line per criterion."""
import pytest

_OUTCOMES: dict[int, tuple[str, str]] = {}
_NOTES: dict[int, list[str]] = {}


@pytest.fixture
def note():
    """``note(criterion, text)`` adds a measured value to the summary line."""
    def add(number, text):
        _NOTES.setdefault(number, []).append(text)
    return add


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    m = item.get_closest_marker("criterion")
    if m is not None:
        outcome.get_result().criterion = tuple(m.args)


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None:
        return
    number, title = marker
    # setup errors and skips count as failures; a criterion passes only if all its parts pass
    failed = report.failed or (report.when == "call" and report.skipped)
    prev = _OUTCOMES.get(number, ("PASS", title))[0]
    _OUTCOMES[number] = ("FAIL" if failed or prev == "FAIL" else "PASS", title)


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_OUTCOMES):
        status, title = _OUTCOMES[number]
        extra = "; ".join(_NOTES.get(number, []))
        terminalreporter.write_line(f"{status} criterion {number}: {title}" + (f" [{extra}]" if extra else ""))
