import pytest

TITLES = {
    1: "metric formula values",
    2: "metric oracle equivalence",
    3: "gradient correctness",
    4: "softmax / cross-entropy properties",
    5: "desk-scale learning",
    6: "quantization fidelity",
    7: "int8 latency",
    8: "wire compactness",
    9: "protocol correctness",
    10: "closed-loop efficacy",
    11: "end-to-end determinism",
}

_results = {}  # criterion -> list of (nodeid, passed, details)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number n")
    config.addinivalue_line("markers", "slow: long-running (training, benchmarks)")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n = marker.args[0]
    failed_setup = report.when == "setup" and not report.passed
    if report.when == "call" or failed_setup:
        details = [v for k, v in item.user_properties if k == "measured"]
        _results.setdefault(n, []).append((item.nodeid, report.passed, details))


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    tr = terminalreporter
    tr.write_sep("=", "acceptance criteria")
    for n, title in TITLES.items():
        runs = _results.get(n)
        if not runs:
            tr.write_line(f"AC{n:02d} NOT RUN  {title}")
            continue
        ok = all(passed for _, passed, _ in runs)
        details = "; ".join(d for _, _, ds in runs for d in ds)
        tr.write_line(f"AC{n:02d} {'PASS' if ok else 'FAIL'}     {title}"
                      + (f"  [{details}]" if details else ""))
