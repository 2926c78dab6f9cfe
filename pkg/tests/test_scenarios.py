import numpy as np
import pytest

from pmpstar import ContractError, ControlSystem, CostSpec, Gaussian, TerminalPenalty, TimeGrid, get_scenario
from pmpstar.scenarios import REGISTRY, Scenario, cheapest_stop, double_integrator

from conftest import solve


def test_registry_names():
    assert set(REGISTRY) == {"cheapest-stop", "cheapest-stop-dirac", "nonlinear-drift"}


def test_unknown_scenario_lists_known():
    with pytest.raises(ContractError) as exc:
        get_scenario("no-such-thing")
    for name in REGISTRY:
        assert name in str(exc.value)


def test_parameters_forwarded():
    sc = get_scenario("cheapest-stop", x0=2.0, v0=-1.0, k=3.0, t1=0.5, n_steps=40)
    assert sc.grid.t1 == 0.5 and sc.grid.n_steps == 40
    np.testing.assert_array_equal(sc.distribution.mean, [2.0, -1.0])
    assert sc.cost.terminal_penalty(np.array([1.0, 1.0])) == 6.0


def test_unit_variance_default():
    sc = cheapest_stop()
    assert isinstance(sc.distribution, Gaussian)
    np.testing.assert_array_equal(sc.distribution.covariance, np.eye(2))


@pytest.mark.parametrize("args", [(0.0, 0.0, 1.0, 1.0), (1.5, -0.5, 0.0, 1.0), (-2.0, 3.0, 0.0, 2.0)])
def test_trivial_optima(args):
    res = solve(cheapest_stop(*args, n_steps=50))
    assert np.max(np.abs(res.control.values)) < 1e-8


def test_braking_control(stop_solution):
    assert np.all(stop_solution.control.values < 0)


@pytest.mark.parametrize("kwargs", [{"k": -1.0}, {"t1": 0.0}])
def test_invalid_parameters(kwargs):
    with pytest.raises(ContractError):
        cheapest_stop(**kwargs)


def test_with_grid(stop):
    fine = stop.with_grid(300)
    assert fine.grid.n_steps == 300 and fine.distribution is stop.distribution


class TestValidation:
    def _cost(self, penalty=None):
        return CostSpec(lambda q, u: u[..., 0] ** 2, 1.0, terminal_penalty=penalty)

    def test_wrong_jacobian_rejected(self):
        bad = ControlSystem(
            2, 1, lambda q, u: np.stack([q[..., 1], u[..., 0]], -1),
            jacobian_q=lambda q, u: np.broadcast_to(np.eye(2), q.shape[:-1] + (2, 2)),
        )
        with pytest.raises(ContractError, match="jacobian_q"):
            Scenario("bad", bad, Gaussian([0, 0], np.eye(2)), self._cost(), TimeGrid(1.0, 10))

    def test_wrong_penalty_gradient_rejected(self):
        pen = TerminalPenalty(lambda q: np.sum(q * q, -1), lambda q: q)
        with pytest.raises(ContractError, match="penalty"):
            Scenario("bad", double_integrator(), Gaussian([0, 0], np.eye(2)), self._cost(pen), TimeGrid(1.0, 10))

    def test_dimension_mismatch(self):
        with pytest.raises(ContractError):
            Scenario("bad", double_integrator(), Gaussian([0.0], [[1.0]]), self._cost(), TimeGrid(1.0, 10))

    def test_horizon_mismatch(self):
        with pytest.raises(ContractError):
            Scenario("bad", double_integrator(), Gaussian([0, 0], np.eye(2)), self._cost(), TimeGrid(2.0, 10))

    def test_dynamics_shape(self):
        bad = ControlSystem(2, 1, lambda q, u: q[..., :1])
        with pytest.raises(ContractError):
            Scenario("bad", bad, Gaussian([0, 0], np.eye(2)), self._cost(), TimeGrid(1.0, 10))
