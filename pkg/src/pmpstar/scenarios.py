"""Built-in problems: the stochastic cheapest-stop problem and synthetic companions."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .cost import CostSpec, PenaltyMode, TerminalPenalty, check_penalty_gradient
from .distribution import Dirac, Gaussian, InitialDistribution
from .dynamics import ControlSystem, TimeGrid, check_jacobians
from .errors import ContractError

JACOBIAN_TOL = 1e-5


@dataclass(frozen=True)
class Scenario:
    name: str
    system: ControlSystem
    distribution: InitialDistribution
    cost: CostSpec
    grid: TimeGrid
    params: dict = field(default_factory=dict)
    reference: Optional[dict] = None

    def __post_init__(self):
        validate(self)

    def with_grid(self, n_steps: int) -> "Scenario":
        return Scenario(self.name, self.system, self.distribution, self.cost,
                        TimeGrid(self.grid.t1, n_steps), self.params, self.reference)


def validate(sc: Scenario) -> None:
    """Dimension and derivative consistency; raises ContractError on failure."""
    n, m = sc.system.state_dim, sc.system.control_dim
    if sc.distribution.dim != n:
        raise ContractError(f"{sc.name}: distribution dimension {sc.distribution.dim} != {n}")
    if abs(sc.grid.t1 - sc.cost.horizon) > 1e-12 * max(1.0, sc.cost.horizon):
        raise ContractError(f"{sc.name}: grid horizon differs from cost horizon")
    rng = np.random.Generator(np.random.Philox(12345))
    probes = [(rng.normal(size=n), np.clip(rng.normal(size=m), sc.system.control_lower, sc.system.control_upper))
              for _ in range(5)]
    out = sc.system.f(probes[0][0], probes[0][1])
    if out.shape != (n,):
        raise ContractError(f"{sc.name}: dynamics returned shape {out.shape}, expected {(n,)}")
    for key, dev in check_jacobians(sc.system, probes).items():
        if dev > JACOBIAN_TOL:
            raise ContractError(f"{sc.name}: {key} deviates from finite differences by {dev:.2e}")
    dev = check_penalty_gradient(sc.cost, [q for q, _ in probes])
    if dev is not None and dev > JACOBIAN_TOL:
        raise ContractError(f"{sc.name}: penalty gradient deviates from finite differences by {dev:.2e}")


def double_integrator(control_lower=None, control_upper=None) -> ControlSystem:
    """``x1' = x2, x2' = u`` with analytic Jacobians."""
    a = np.array([[0.0, 1.0], [0.0, 0.0]])
    b = np.array([[0.0], [1.0]])
    return ControlSystem(
        state_dim=2,
        control_dim=1,
        dynamics=lambda q, u: np.stack([q[..., 1], u[..., 0]], axis=-1),
        control_lower=control_lower,
        control_upper=control_upper,
        jacobian_q=lambda q, u: np.broadcast_to(a, q.shape[:-1] + (2, 2)),
        jacobian_u=lambda q, u: np.broadcast_to(b, q.shape[:-1] + (2, 1)),
        control_affine=True,
        name="double-integrator",
    )


def quadratic_penalty(k: float, n: int = 2) -> TerminalPenalty:
    """``k * |q|^2``."""
    return TerminalPenalty(
        value=lambda q: k * np.sum(q * q, axis=-1),
        gradient=lambda q: 2.0 * k * q,
        hessian=lambda q: np.broadcast_to(2.0 * k * np.eye(n), q.shape + (n,)),
    )


def control_energy(horizon: float, penalty: Optional[TerminalPenalty]) -> CostSpec:
    """``phi = u^2`` (no state dependence)."""
    return CostSpec(
        running_cost=lambda q, u: u[..., 0] ** 2,
        horizon=horizon,
        running_cost_grad_q=lambda q, u: np.zeros(np.broadcast_shapes(q.shape, u.shape[:-1] + q.shape[-1:])),
        running_cost_grad_u=lambda q, u: 2.0 * u,
        terminal_penalty=penalty,
        penalty_mode=PenaltyMode.TERMINAL_TRANSVERSALITY,
        control_hessian=np.array([[2.0]]),
    )


def cheapest_stop(x0: float = 1.0, v0: float = 1.0, k: float = 1.0, t1: float = 1.0,
                  n_steps: int = 100, covariance=None) -> Scenario:
    """Brake a train with uncertain position and speed: ``x'' = u``, ``(x, x')(0) ~ N((x0, v0), I)``.

    Minimizes ``E[ int u^2 dt + k (x(t1)^2 + x'(t1)^2) ]``.  ``covariance``
    overrides the identity for testing.
    """
    if k < 0 or t1 <= 0:
        raise ContractError("cheapest_stop needs k >= 0 and t1 > 0")
    cov = np.eye(2) if covariance is None else np.asarray(covariance, dtype=float)
    return Scenario(
        name="cheapest-stop",
        system=double_integrator(),
        distribution=Gaussian([x0, v0], cov),
        cost=control_energy(t1, quadratic_penalty(k)),
        grid=TimeGrid(t1, n_steps),
        params={"x0": x0, "v0": v0, "k": k, "t1": t1, "steps": n_steps},
        reference={"control_shape": "affine-in-t"},
    )


def cheapest_stop_dirac(x0: float = 1.0, v0: float = 1.0, k: float = 1.0, t1: float = 1.0,
                        n_steps: int = 100) -> Scenario:
    """Classic deterministic cheapest stop (known initial state)."""
    sc = cheapest_stop(x0, v0, k, t1, n_steps)
    return Scenario("cheapest-stop-dirac", sc.system, Dirac([x0, v0]), sc.cost, sc.grid,
                    dict(sc.params), {"control_shape": "affine-in-t"})


def nonlinear_drift(x0: float = 1.0, v0: float = 1.0, k: float = 1.0, t1: float = 1.0,
                    n_steps: int = 100, drag: float = 0.1, state_weight: float = 0.5) -> Scenario:
    """Cubic drag ``x2' = u - drag * x2^3`` with a quadratic state cost.

    No analytic Jacobians are supplied, so the costate sweep runs on finite
    differences of the dynamics.
    """
    system = ControlSystem(
        state_dim=2,
        control_dim=1,
        dynamics=lambda q, u: np.stack([q[..., 1], u[..., 0] - drag * q[..., 1] * q[..., 1] * q[..., 1]], axis=-1),
        control_affine=True,
        name="nonlinear-drift",
    )
    cost = CostSpec(
        running_cost=lambda q, u: u[..., 0] ** 2 + state_weight * np.sum(q * q, axis=-1),
        horizon=t1,
        running_cost_grad_q=lambda q, u: 2.0 * state_weight * q,
        running_cost_grad_u=lambda q, u: 2.0 * u,
        terminal_penalty=quadratic_penalty(k),
        control_hessian=np.array([[2.0]]),
    )
    return Scenario(
        name="nonlinear-drift",
        system=system,
        distribution=Gaussian([x0, v0], np.eye(2)),
        cost=cost,
        grid=TimeGrid(t1, n_steps),
        params={"x0": x0, "v0": v0, "k": k, "t1": t1, "steps": n_steps},
    )


def cubic_control_cost(x0: float = 0.5, v0: float = 0.5, k: float = 1.0, t1: float = 1.0,
                       n_steps: int = 50, cubic: float = -0.3) -> Scenario:
    """Cheapest stop with ``phi = u^2 + cubic * u^3`` and ``u in [-1, 1]``; its optimum is not affine."""
    system = double_integrator(control_lower=[-1.0], control_upper=[1.0])
    cost = CostSpec(
        running_cost=lambda q, u: u[..., 0] ** 2 + cubic * u[..., 0] ** 3,
        horizon=t1,
        running_cost_grad_q=lambda q, u: np.zeros(np.broadcast_shapes(q.shape, u.shape[:-1] + q.shape[-1:])),
        running_cost_grad_u=lambda q, u: 2.0 * u + 3.0 * cubic * u**2,
        terminal_penalty=quadratic_penalty(k),
    )
    return Scenario(
        name="cubic-control-cost",
        system=system,
        distribution=Gaussian([x0, v0], np.eye(2)),
        cost=cost,
        grid=TimeGrid(t1, n_steps),
        params={"x0": x0, "v0": v0, "k": k, "t1": t1, "steps": n_steps},
    )


REGISTRY: dict[str, Callable[..., Scenario]] = {
    "cheapest-stop": cheapest_stop,
    "cheapest-stop-dirac": cheapest_stop_dirac,
    "nonlinear-drift": nonlinear_drift,
}


def get_scenario(name: str, **params) -> Scenario:
    try:
        builder = REGISTRY[name]
    except KeyError:
        raise ContractError(f"unknown scenario {name!r}; known scenarios: {', '.join(sorted(REGISTRY))}") from None
    return builder(**{k: v for k, v in params.items() if v is not None})
