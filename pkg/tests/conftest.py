import numpy as np
import pytest

from edof.optics import OpticsSpec, PhaseMaskSpec, build_kernel_set

PSI_GRID = tuple(float(p) for p in range(1, 9))


@pytest.fixture(scope="session")
def optics():
    return OpticsSpec()


@pytest.fixture(scope="session")
def coded_kernels(optics):
    return build_kernel_set(optics, PhaseMaskSpec.default(), PSI_GRID)


@pytest.fixture(scope="session")
def clear_kernels(optics):
    return build_kernel_set(optics, PhaseMaskSpec.clear(), PSI_GRID)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_criteria: dict[str, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid or report.when not in ("setup", "call"):
        return
    if report.when == "setup" and report.passed:
        return
    detail = dict(report.user_properties).get("detail", "")
    name = report.nodeid.split("::")[-1]
    _criteria[name] = ("PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name, (status, detail) in sorted(_criteria.items(), key=lambda kv: int(kv[0].split("_")[2])):
        terminalreporter.write_line(f"{status}  {name}  {detail}")
