from __future__ import annotations

import pytest

CRITERIA = {
    1: "zero violations and verified audits on shielded RL days",
    2: "shield property suite",
    3: "matching engine equals the reference matcher",
    4: "PPO gradient check and GAE fixture",
    5: "audit tamper detection",
    6: "statistics oracles",
    7: "baseline ordering Greedy < TWAP < 0",
    8: "trained policy beats random; toy curve improves",
    9: "alpha-sweep shape",
    10: "determinism",
    11: "conservation and completion",
}

_outcomes: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion the test belongs to")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n = marker.args[0]
    rec = _outcomes.setdefault(n, {"status": "PASS", "seconds": 0.0, "failed": []})
    rec["seconds"] += rep.duration
    if rep.failed:
        rec["status"] = "FAIL"
        rec["failed"].append(item.name)
    elif rep.skipped and rec["status"] == "PASS" and rep.when in ("setup", "call"):
        rec["status"] = "SKIP"


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_outcomes):
        rec = _outcomes[n]
        extra = f"  failed: {', '.join(rec['failed'])}" if rec["failed"] else ""
        terminalreporter.write_line(f"criterion {n:2d}: {rec['status']}  {CRITERIA[n]} "
                                    f"({rec['seconds']:.1f} s){extra}")
