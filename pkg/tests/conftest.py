import numpy as np
import pytest

from anisosim.volume import Volume3

_ACCEPTANCE = []


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def random_volume(rng):
    def make(shape=(16, 16, 16), **kw):
        return Volume3(rng.random(shape), **kw)

    return make


def pytest_runtest_logreport(report):
    if "test_acceptance.py" in report.nodeid and report.when == "call":
        _ACCEPTANCE.append(report)
    elif "test_acceptance.py" in report.nodeid and report.when == "setup" and report.failed:
        _ACCEPTANCE.append(report)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for rep in _ACCEPTANCE:
        props = dict(rep.user_properties)
        label = props.get("criterion", rep.nodeid.split("::")[-1])
        status = "PASS" if rep.passed else "FAIL"
        detail = props.get("detail", "")
        terminalreporter.write_line(f"{status}  {label}  {detail}".rstrip())
