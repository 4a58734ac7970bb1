import pytest

ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def acceptance(request):
    """record(number, title, passed, detail) adds one line to the end-of-run summary."""
    lines = request.config.stash[ACCEPTANCE]

    def record(number: int, title: str, passed: bool, detail: str) -> None:
        lines.append(f"criterion {number:02d} {'PASS' if passed else 'FAIL'}  {title}: {detail}")

    return record
