import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))


def pytest_terminal_summary(terminalreporter):
    import acceptance_log

    if acceptance_log.RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(acceptance_log.RESULTS):
            terminalreporter.write_line(acceptance_log.RESULTS[number])
