import numpy as np
import pytest

from pmpstar import SolverConfig, solve_pmp_star
from pmpstar.scenarios import cheapest_stop, cheapest_stop_dirac, cubic_control_cost, double_integrator, nonlinear_drift

SHIPPED = {
    "cheapest-stop": cheapest_stop,
    "cheapest-stop-dirac": cheapest_stop_dirac,
    "nonlinear-drift": nonlinear_drift,
}


def solve(scenario, **config):
    return solve_pmp_star(scenario.system, scenario.distribution, scenario.cost, scenario.grid, SolverConfig(**config))


@pytest.fixture(scope="session")
def di():
    return double_integrator()


@pytest.fixture(scope="session")
def stop():
    return cheapest_stop(1.0, 1.0, 1.0, 1.0, n_steps=100)


@pytest.fixture(scope="session")
def stop_solution(stop):
    return solve(stop)


@pytest.fixture(scope="session")
def stop_dirac():
    return cheapest_stop_dirac(1.0, 1.0, 1.0, 1.0, n_steps=100)


@pytest.fixture(scope="session")
def stop_dirac_solution(stop_dirac):
    return solve(stop_dirac)


@pytest.fixture(scope="session")
def drift():
    return nonlinear_drift()


@pytest.fixture(scope="session")
def drift_solution(drift):
    return solve(drift)


@pytest.fixture(scope="session")
def cubic():
    return cubic_control_cost()


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(2024))


# one line per acceptance criterion, filled by test_acceptance and echoed after the run
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
