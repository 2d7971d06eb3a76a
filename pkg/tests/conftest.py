import pytest

_LINES = pytest.StashKey[list]()


@pytest.fixture
def report(request):
    """Record one ``PASS``/``FAIL`` line for the acceptance summary."""
    lines = request.config.stash.setdefault(_LINES, [])

    def record(name, passed, detail=""):
        line = f"{'PASS' if passed else 'FAIL'} {name} {detail}".rstrip()
        lines.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
