def pytest_terminal_summary(terminalreporter):
    # surface the acceptance gate verdicts even though pytest captures stdout
    try:
        from test_acceptance import GATE_LINES
    except ImportError:
        return
    if GATE_LINES:
        terminalreporter.section("acceptance gate")
        for line in GATE_LINES:
            terminalreporter.write_line(line)
