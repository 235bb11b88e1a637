import sys

import numpy as np
import pytest

from earlyrec.data import GeneratorSpec, generate_dataset


@pytest.fixture(scope="session")
def small_spec():
    return GeneratorSpec(num_classes=3, feature_dim=5, duration_mean=24.0, duration_std=4.0, seed=3)


@pytest.fixture(scope="session")
def small_dataset(small_spec):
    return generate_dataset(small_spec, [5, 5, 5])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = {}  # test name -> (passed, failure summary)


def pytest_runtest_logreport(report):
    if "test_acceptance" not in report.nodeid or not report.nodeid.split("::")[-1].startswith("test_criterion"):
        return
    name = report.nodeid.split("::")[-1]
    if report.failed:
        _ACCEPTANCE[name] = (False, str(report.longrepr.reprcrash.message) if hasattr(report.longrepr, "reprcrash")
                             else str(report.longrepr).splitlines()[-1])
    elif report.when == "call" and name not in _ACCEPTANCE:
        _ACCEPTANCE[name] = (True, "")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    details = getattr(mod, "RESULTS", {})
    terminalreporter.section("acceptance criteria")
    for name, (passed, failure) in _ACCEPTANCE.items():
        label, detail = details.get(name, (name, failure))
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {label}  ({detail})")
