import criteria


def pytest_terminal_summary(terminalreporter):
    if criteria.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(criteria.RESULTS):
            terminalreporter.write_line(line)
