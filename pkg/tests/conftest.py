"""Test-suite wiring: acceptance criteria summary lines."""

_acceptance_lines: list[str] = []


def record_acceptance(line: str) -> None:
    """Register a criterion verdict for the end-of-run summary."""
    _acceptance_lines.append(line)


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)
