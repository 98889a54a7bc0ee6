"""Shared test plumbing: puts ``tests/`` on the path for ``oracles`` and
prints the acceptance table at the end of the session."""

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_ACCEPTANCE: dict[int, dict] = {}


@pytest.fixture
def criterion(request):
    """Record a detail line for the acceptance criterion this test covers.

    The test name carries the number: ``test_criterion_07_...``.
    """
    number = int(request.node.name.split("_")[2])
    entry = _ACCEPTANCE.setdefault(number, {"title": request.node.name, "detail": "", "outcome": "not run"})

    def note(detail: str) -> None:
        entry["detail"] = detail

    return note


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    name = item.name
    if not name.startswith("test_criterion_"):
        return
    number = int(name.split("_")[2])
    entry = _ACCEPTANCE.setdefault(number, {"title": name, "detail": "", "outcome": "not run"})
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        entry["outcome"] = "PASS" if rep.passed else "FAIL"
        if rep.failed and not entry["detail"]:
            entry["detail"] = str(rep.longrepr).strip().splitlines()[-1][:160]


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        e = _ACCEPTANCE[number]
        label = e["title"].split("_", 3)[-1]
        terminalreporter.write_line(f"[{e['outcome']:>4}] criterion {number:2d} {label}: {e['detail']}")
