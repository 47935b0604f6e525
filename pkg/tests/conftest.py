import pytest

_RESULTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_RESULTS] = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance line: call with (number, summary) after the checks pass.

    A test that fails before recording is reported as FAIL using its marker.
    """
    results = request.config.stash[_RESULTS]
    marker = request.node.get_closest_marker("criterion")
    num, title = marker.args
    results[num] = ("FAIL", title, "")

    def record(detail):
        results[num] = ("PASS", title, detail)

    yield record


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash[_RESULTS]
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(results):
        status, title, detail = results[num]
        terminalreporter.write_line(f"[{status}] {num:2d}. {title}" + (f": {detail}" if detail else ""))
