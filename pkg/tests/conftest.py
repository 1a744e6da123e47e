import numpy as np
import pytest
import torch

torch.set_num_threads(1)

_criteria: dict[int, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number covered by the test")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _tag_criterion(request):
    marker = request.node.get_closest_marker("criterion")
    if marker is not None:
        request.node.user_properties.append(("criterion", marker.args[0]))


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    if report.when == "call" or report.failed:
        entry = _criteria.setdefault(props["criterion"], [True, []])
        entry[0] = entry[0] and report.passed
        if props.get("detail"):
            entry[1].append(str(props["detail"]))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        ok, details = _criteria[n]
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}"
        if details:
            line += " (" + "; ".join(details) + ")"
        terminalreporter.write_line(line)
