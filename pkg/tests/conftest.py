"""Collects ``@pytest.mark.criterion`` outcomes and prints one line per criterion."""
import pytest

_outcomes: dict[str, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(id, title): acceptance criterion this test belongs to")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and not rep.failed):
        return
    cid, title = mark.args
    entry = _outcomes.setdefault(cid, {"title": title, "failed": [], "ran": 0})
    entry["ran"] += 1
    if rep.failed:
        entry["failed"].append(item.name)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    key = lambda c: (int("".join(ch for ch in c if ch.isdigit())), c)  # noqa: E731
    for cid in sorted(_outcomes, key=key):
        e = _outcomes[cid]
        status = "FAIL" if e["failed"] else "PASS"
        detail = f"  [failed: {', '.join(e['failed'])}]" if e["failed"] else ""
        terminalreporter.write_line(f"{status}  criterion {cid:<3s} {e['title']}{detail}")
