import helpers


def pytest_terminal_summary(terminalreporter):
    if helpers.VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in helpers.VERDICTS:
            terminalreporter.write_line(line)
