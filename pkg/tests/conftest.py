"""Shared pytest wiring: the acceptance-criterion report section."""

_criterion_lines = []


def record_criterion(line):
    """Collect a criterion verdict for the end-of-run summary."""
    _criterion_lines.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _criterion_lines:
        terminalreporter.section("acceptance criteria")
        for line in _criterion_lines:
            terminalreporter.line(line)
