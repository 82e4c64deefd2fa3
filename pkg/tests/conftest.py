import pytest

_VERDICTS: list[str] = []


@pytest.fixture(scope="session")
def verdict():
    """Record one ``[PASS]``/``[FAIL]`` line and echo it immediately."""

    def emit(criterion: int, passed: bool, text: str, details=()):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {text}"
        _VERDICTS.append(line)
        _VERDICTS.extend(f"    {d}" for d in details)
        print(line)
        for d in details:
            print(f"    {d}")
        return passed

    return emit


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
