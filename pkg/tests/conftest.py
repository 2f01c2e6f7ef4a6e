import pytest

from ecann.demo import make_demo_snapshots

# One pass/fail line per acceptance criterion in the terminal summary.
_ACCEPTANCE_RESULTS: list[tuple[str, str]] = []


@pytest.hookimpl(trylast=True)
def pytest_runtest_logreport(report):
    if report.when != "call" or "test_acceptance" not in str(report.nodeid):
        return
    name = report.nodeid.split("::")[-1]
    _ACCEPTANCE_RESULTS.append((name, report.outcome))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _ACCEPTANCE_RESULTS:
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{status}  {name}")


@pytest.fixture(scope="session")
def demo_snapshots():
    return make_demo_snapshots(seed=7, n_families=40)
