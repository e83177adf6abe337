import pytest

_VERDICTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_VERDICTS] = []


@pytest.fixture
def verdict(request):
    """Record one acceptance line, then assert it."""
    lines = request.config.stash[_VERDICTS]

    def record(number: int, ok: bool, detail: str) -> None:
        lines.append((number, f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"))
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_VERDICTS, [])
    if not lines:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for _, line in sorted(lines):
        terminalreporter.write_line(line)
