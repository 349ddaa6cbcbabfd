import numpy as np
import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def t64(x):
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


# --- acceptance summary -----------------------------------------------------
# Tests marked ``acceptance(number, title)`` get one PASS/FAIL line in the
# terminal summary, whether or not output capture is enabled.

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or report.when != "call" and not report.failed:
        return
    number, title = mark.args
    ok = report.passed and _ACCEPTANCE.get(number, (True,))[0]
    _ACCEPTANCE[number] = (ok, title, report.duration)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        ok, title, duration = _ACCEPTANCE[number]
        terminalreporter.write_line(f"[{number}] {'PASS' if ok else 'FAIL'}  {title}  ({duration:.2f}s)")
