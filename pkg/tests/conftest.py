import re

import numpy as np
import pytest

from wmflow.phantom import PhantomSpec
from wmflow.volume import GridMeta

_CRITERIA = {}
_NOTES = {}


@pytest.fixture
def meta():
    return GridMeta((4, 3, 2), (2.5, 2.5, 3.0), 8, 1.5)


@pytest.fixture
def small_spec():
    """Quick u-arch phantom; radius chosen so no voxel center sits on the wall."""
    return PhantomSpec(
        dims=(24, 16, 24),
        radius_mm=5.5,
        arch_radius_mm=20.0,
        n_frames=20,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def note(request):
    """Attach a measured value to the acceptance summary line of this test."""
    match = re.match(r"test_criterion_(\d+)_", request.node.name)

    def add(text):
        _NOTES.setdefault(int(match.group(1)), []).append(text)

    return add


def pytest_runtest_logreport(report):
    match = re.search(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)", report.nodeid)
    if not match:
        return
    num = int(match.group(1))
    if report.when == "call" or report.outcome != "passed":
        name, previous = _CRITERIA.get(num, (match.group(2), "passed"))
        _CRITERIA[num] = (name, previous if report.outcome == "passed" else report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num, (name, outcome) in sorted(_CRITERIA.items()):
        verdict = "PASS" if outcome == "passed" else "FAIL"
        notes = "; ".join(_NOTES.get(num, []))
        terminalreporter.write_line(f"criterion {num:2d} {name:<32s} {verdict}" + (f"  ({notes})" if notes else ""))
