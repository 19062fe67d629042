import sys

import pytest

from fvpkit.trajectory import SOBOLEV_LIFETIME


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if acceptance is not None and acceptance.LINES:
        terminalreporter.section("acceptance criteria")
        for line in acceptance.LINES:
            terminalreporter.write_line(line)
    a = SOBOLEV_LIFETIME
    terminalreporter.write_line(
        f"Sobolev audit: {a['checked']} trajectories checked, {a['violations']} violations, "
        f"worst relative margin {a['worst_relative_margin']:.3g}")


@pytest.hookimpl(trylast=True)
def pytest_sessionfinish(session, exitstatus):
    if SOBOLEV_LIFETIME["violations"] and exitstatus == 0:
        session.exitstatus = 1
