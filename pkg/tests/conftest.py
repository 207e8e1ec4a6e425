"""Session fixtures shared by the acceptance gates.

The 2D benchmark solves and the effective symbol grid are the expensive
pieces, so they are computed once per session and reused by every
criterion that needs them.
"""

import time

import numpy as np
import pytest

from magwell.effective import effective_principal, effective_subprincipal
from magwell.geometry import model_a
from magwell.magnetic2d import TubeDiscretization, assemble_2d, solve_2d
from magwell.montgomery import critical_point_cached

BENCHMARK_H = (0.05, 0.02, 0.01)

# verdict lines collected by the acceptance gates, replayed after the run
# so they stay visible under output capture
ACCEPTANCE_LINES = []


def pytest_configure(config):
    config._suite_started = time.time()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def model_a_entry():
    return model_a()


@pytest.fixture(scope="session")
def critical_band1():
    return critical_point_cached(1)


@pytest.fixture(scope="session")
def direct_a(model_a_entry):
    """Model A benchmark solves at 301x121 with per-solve wall times."""
    runs = {}
    for h in BENCHMARK_H:
        disc = TubeDiscretization(h=h, energy_window_top=0.72)
        disc.validate_against(model_a_entry)
        operator = assemble_2d(model_a_entry, disc)
        start = time.perf_counter()
        result = solve_2d(operator, 8, tol=1e-8)
        runs[h] = {
            "operator": operator,
            "result": result,
            "seconds": time.perf_counter() - start,
        }
    return runs


@pytest.fixture(scope="session")
def effective_a(model_a_entry):
    """Band-1 effective symbol for Model A on the standard window."""
    x = np.linspace(-1.6, 1.6, 161)
    xi = np.linspace(-0.55, 1.35, 191)
    grid = effective_principal(model_a_entry, 1, x, xi)
    return effective_subprincipal(model_a_entry, 1, grid)
