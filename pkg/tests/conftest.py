import pytest

CRITERIA = range(1, 11)
_results: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """Record the outcome of one acceptance criterion, then assert it."""
    def record(n: int, parts: dict, detail: str = ""):
        ok = all(bool(v) for v in parts.values())
        failed = [k for k, v in parts.items() if not v]
        text = detail if ok else f"{detail}; failing: {', '.join(failed)}"
        _results[n] = (ok, text)
        print(f"criterion {n}: {'PASS' if ok else 'FAIL'} {text}")
        assert ok, text
    return record


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n in CRITERIA:
        ok, text = _results.get(n, (False, "not run"))
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {text}")
