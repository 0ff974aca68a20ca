import socket
import time
from pathlib import Path

import pytest

DATA = Path(__file__).parent / "data"
SUITE_BUDGET_S = 120.0

_started = time.monotonic()
_criteria = {}


@pytest.fixture
def data_dir() -> Path:
    return DATA


@pytest.fixture
def no_network(monkeypatch):
    """Fail any attempt to open a socket connection."""

    def refuse(*args, **kwargs):
        raise AssertionError("network access attempted")

    monkeypatch.setattr(socket.socket, "connect", refuse)
    monkeypatch.setattr(socket, "create_connection", refuse)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number = marker.args[0]
    entry = _criteria.setdefault(number, {"title": marker.kwargs.get("title", ""), "status": "PASS", "notes": []})
    if rep.failed:
        entry["status"] = "FAIL"
    elif rep.skipped and entry["status"] == "PASS" and rep.when in ("setup", "call"):
        entry["status"] = "SKIP"
        entry["notes"].append(str(rep.longrepr[-1]) if isinstance(rep.longrepr, tuple) else "skipped")
    if rep.when == "call":
        entry["notes"].extend(f"{k}={v}" for k, v in rep.user_properties)


def _suite_check(terminalreporter):
    elapsed = time.monotonic() - _started
    return elapsed, elapsed < SUITE_BUDGET_S


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _criteria:
        return
    elapsed, fast = _suite_check(terminalreporter)
    if 7 in _criteria:
        _criteria[7]["notes"].append(f"suite_seconds={elapsed:.1f} (budget {SUITE_BUDGET_S:.0f})")
        if not fast:
            _criteria[7]["status"] = "FAIL"
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        entry = _criteria[number]
        notes = "; ".join(entry["notes"])
        terminalreporter.write_line(f"{entry['status']} criterion {number}: {entry['title']}" + (f" [{notes}]" if notes else ""))


def pytest_sessionfinish(session, exitstatus):
    elapsed = time.monotonic() - _started
    if 7 in _criteria and elapsed >= SUITE_BUDGET_S and session.exitstatus == 0:
        session.exitstatus = 1
