import pytest


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run the multi-hour desk-scale acceptance criteria")


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number n")
    config._criteria = {}


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="desk-scale run; enable with --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    rec = item.config._criteria.setdefault(n, {"title": title, "outcome": "PASS", "detail": ""})
    if call.excinfo is None:
        if call.when == "call":
            rec["detail"] = getattr(item, "criterion_detail", "")
        return
    if call.excinfo.errisinstance(pytest.skip.Exception):
        rec["outcome"] = "NOT RUN"
        rec["detail"] = str(call.excinfo.value.msg) if hasattr(call.excinfo.value, "msg") else ""
    else:
        rec["outcome"] = "FAIL"
        rec["detail"] = getattr(item, "criterion_detail", "") or call.excinfo.exconly().splitlines()[0][:200]


def pytest_terminal_summary(terminalreporter, config):
    crit = config._criteria
    if not crit:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(crit):
        rec = crit[n]
        line = f"criterion {n:>2} {rec['outcome']:<7} {rec['title']}"
        if rec["detail"]:
            line += f"  [{rec['detail']}]"
        terminalreporter.write_line(line)
