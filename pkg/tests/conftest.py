"""Collects acceptance-criterion outcomes and prints one line per criterion."""

import pytest

RESULTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[RESULTS] = {}
    config.addinivalue_line("markers", "criterion(k): acceptance criterion number k")


@pytest.fixture
def criterion(request):
    """Record the outcome of the criterion named by the test's marker."""
    marker = request.node.get_closest_marker("criterion")
    if marker is None:
        raise RuntimeError("the criterion fixture needs @pytest.mark.criterion(k)")
    k = marker.args[0]

    def record(passed: bool, detail: str) -> bool:
        request.config.stash[RESULTS][k] = (bool(passed), detail)
        return bool(passed)

    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not report.failed:
        return
    results = item.config.stash[RESULTS]
    k = marker.args[0]
    if k not in results or results[k][0]:
        # errored before (or after) recording a verdict
        msg = str(call.excinfo.value).splitlines()[0] if call.excinfo else "error"
        results[k] = (False, f"{report.when} error: {msg}")


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash[RESULTS]
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(results):
        passed, detail = results[k]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} criterion {k}: {detail}")
