"""Shared pytest plumbing.

The acceptance tests record one verdict per criterion here; the terminal
summary hook then prints them in a dedicated section, outside pytest's
output capture, so every run of the suite ends with one visible pass/fail
line per criterion.
"""

ACCEPTANCE_RESULTS: dict[int, str] = {}


def record_acceptance(criterion: int, passed: bool, detail: str) -> None:
    verdict = "PASS" if passed else "FAIL"
    line = f"criterion {criterion:2d}: {verdict} — {detail}"
    ACCEPTANCE_RESULTS[criterion] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[criterion])
