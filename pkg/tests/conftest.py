"""Shared pytest plumbing: the acceptance suite reports one line per criterion."""

ACCEPTANCE_LINES: dict = {}


def record_criterion(key: str, ok: bool, detail: str) -> str:
    line = f"{'PASS' if ok else 'FAIL'}  {key}: {detail}"
    ACCEPTANCE_LINES[key] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=lambda k: int(k.split()[0][1:])):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
