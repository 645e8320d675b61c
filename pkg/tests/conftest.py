import re

_GATES = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_criterion_(\d+)", report.nodeid)
    if not m or report.when != "call" and report.passed:
        return
    number = int(m.group(1))
    lines = [ln for ln in report.capstdout.splitlines() if ln.startswith(("[PASS]", "[FAIL]"))]
    if lines:
        _GATES[number] = lines[-1]
    elif report.failed:
        _GATES[number] = f"[FAIL] criterion {number:2d}: raised before reaching its gate"


def pytest_terminal_summary(terminalreporter):
    if not _GATES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_GATES):
        terminalreporter.write_line(_GATES[number])
    passed = sum(line.startswith("[PASS]") for line in _GATES.values())
    terminalreporter.write_line(f"{passed}/{len(_GATES)} criteria passed")
