import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hgosafe import numkit
from hgosafe.observer import build_observer
from hgosafe.plant import ConstantsReport, ConstraintSets, LinearizingController, NormalFormSystem, estimate_constants
from hgosafe.reach import EmptySetWarning, Grid, invariant_set

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

BOX = np.array([[-4.0, 4.0], [-3.0, 3.0]])

_ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def di_system():
    return NormalFormSystem.from_expressions(2, "1", "0", 1.0)


@pytest.fixture(scope="session")
def di_sets():
    return ConstraintSets(BOX.copy(), 1.0)


@pytest.fixture(scope="session")
def di_ctrl():
    return LinearizingController.from_beta(0.2, 2)


@pytest.fixture(scope="session")
def di_design():
    return build_observer([4.0, 4.0], 0.01)


@pytest.fixture(scope="session")
def di_constants(di_system, di_ctrl, di_sets):
    return estimate_constants(di_system, di_ctrl, di_sets)


@pytest.fixture(scope="session")
def exact_constants():
    """Preset constants in closed form (no sampling safety factor)."""
    return ConstantsReport(M1=0.0, M2=1.0, gamma=0.2 * np.sqrt(2.0), L=1.0, C1=np.sqrt(10.0), k=10.0,
                           x_max=25.0, omega_boundary_min_sq=None, grid_density=0, safety_factor=1.0,
                           M1_raw=0.0, gamma_raw=0.2 * np.sqrt(2.0), C1_raw=np.sqrt(10.0), a_min=1.0)


@pytest.fixture(scope="session")
def di_Q(di_ctrl):
    return numkit.solve_lyapunov(di_ctrl.closed_loop_matrix())


@pytest.fixture(scope="session")
def di_grid():
    return Grid.around(BOX, 101)


@pytest.fixture(scope="session")
def di_delta(di_grid, di_system, di_ctrl, di_sets):
    """State-feedback invariant set for the preset, iterated to convergence."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmptySetWarning)
        return invariant_set(di_grid, di_system, di_ctrl, di_sets, "converged", 0.0)


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per criterion; lines are echoed in the terminal summary."""

    def record(label: str, ok: bool, detail: str = "") -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] {label}" + (f": {detail}" if detail else "")
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
