import pytest

REPORT = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[REPORT] = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance verdict; returns the verdict for asserting."""
    report = request.config.stash[REPORT]

    def record(number: int, passed: bool, detail: str) -> bool:
        report[number] = (bool(passed), detail)
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter, config):
    report = config.stash.get(REPORT, {})
    if not report:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(report):
        ok, detail = report[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
