import re

from hypothesis import settings

# fixed example streams so repeated runs are byte-identical
settings.register_profile("deterministic", derandomize=True, database=None, print_blob=False)
settings.load_profile("deterministic")

_CRITERION = re.compile(r"test_acceptance\.py::test_c(\d+)_(\w+)")
_outcomes: dict[tuple[int, str], str] = {}


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if not m:
        return
    key = (int(m.group(1)), m.group(2).replace("_", " "))
    if report.failed:
        _outcomes[key] = "FAIL"
    elif report.when == "call":
        _outcomes.setdefault(key, "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for (num, label), outcome in sorted(_outcomes.items()):
        terminalreporter.write_line(f"criterion {num:2d} {outcome}  {label}")
