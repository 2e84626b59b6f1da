import re

_CRITERIA: dict[int, list] = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_criterion_(\d+)", report.nodeid)
    if not m:
        return
    n = int(m.group(1))
    entry = _CRITERIA.setdefault(n, [True, 0.0, report.nodeid.split("::")[-1].split("[")[0]])
    if report.failed:
        entry[0] = False
    entry[1] += report.duration


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, dur, name = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'} "
                                    f"({dur:.1f} s)  {name}")
