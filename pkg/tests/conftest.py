import numpy as np
import pytest

from loctail.paths import GridSampler, local_time_ensemble, unit_grid
from loctail.presets import preset

ACCEPTANCE_LINES = []

PRESETS = ["bm", "fbm:0.3", "fbm:0.75", "fbm2d:0.4", "aniso:0.5:1,2", "aniso:0.35:2,1.5:1,2",
           "exceptional"]


def record_acceptance(number, title, ok, detail=""):
    line = f"criterion {number} [{title}]: {'PASS' if ok else 'FAIL'}"
    if detail:
        line += f"  ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def bm():
    return preset("bm")


@pytest.fixture(scope="session")
def bm_sampler(bm):
    return GridSampler(bm, unit_grid(1, 2 ** 12))


@pytest.fixture(scope="session")
def bm_ensemble(bm, bm_sampler):
    """10^4 Brownian paths on 2^12 nodes, eps = 2^-4 .. 2^-8."""
    return local_time_ensemble(bm, 10 ** 4, 2024, sampler=bm_sampler)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
