"""Running cost, smooth terminal penalty, penalty absorption and expected cost."""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .distribution import WeightedEnsemble, weighted_mean
from .dynamics import Array, ControlSignal, ControlSystem, TimeGrid, fd_jacobian, rk4_nodes
from .errors import ContractError


class PenaltyMode(enum.Enum):
    TERMINAL_TRANSVERSALITY = "terminal"
    ABSORBED = "absorbed"


@dataclass(frozen=True)
class TerminalPenalty:
    """Smooth penalty ``I(q)`` on the final state, with optional gradient and Hessian."""

    value: Callable[[Array], Array]
    gradient: Optional[Callable[[Array], Array]] = None
    hessian: Optional[Callable[[Array], Array]] = None

    def __call__(self, q) -> Array:
        return np.asarray(self.value(np.asarray(q, dtype=float)), dtype=float)

    def grad(self, q) -> Array:
        q = np.asarray(q, dtype=float)
        if self.gradient is not None:
            return np.broadcast_to(np.asarray(self.gradient(q), dtype=float), q.shape)
        return fd_jacobian(self.value, q)

    def hess(self, q) -> Array:
        q = np.asarray(q, dtype=float)
        if self.hessian is not None:
            return np.broadcast_to(np.asarray(self.hessian(q), dtype=float), q.shape + q.shape[-1:])
        return fd_jacobian(self.grad, q)


@dataclass(frozen=True)
class CostSpec:
    """Expected-cost objective ``E[ int_0^t1 phi(q, u) dt + I(q(t1)) ]``.

    ``control_hessian`` registers ``phi`` as quadratic in ``u`` with that
    constant Hessian, which (together with control-affine dynamics) lets the
    Hamiltonian be maximized in closed form.  ``absorbed_penalty`` is set by
    :func:`absorb_penalty` and records the penalty whose initial expectation
    is the constant offset between the two modes.
    """

    running_cost: Callable[[Array, Array], Array]
    horizon: float
    running_cost_grad_q: Optional[Callable[[Array, Array], Array]] = None
    running_cost_grad_u: Optional[Callable[[Array, Array], Array]] = None
    terminal_penalty: Optional[TerminalPenalty] = None
    penalty_mode: PenaltyMode = PenaltyMode.TERMINAL_TRANSVERSALITY
    control_hessian: Optional[Array] = None
    absorbed_penalty: Optional[TerminalPenalty] = None

    def __post_init__(self):
        if not (np.isfinite(self.horizon) and self.horizon > 0):
            raise ContractError(f"horizon must be positive, got {self.horizon}")
        if self.control_hessian is not None:
            object.__setattr__(self, "control_hessian", np.atleast_2d(np.asarray(self.control_hessian, float)))

    def phi(self, q, u) -> Array:
        return np.asarray(self.running_cost(q, u), dtype=float)

    def grad_q(self, q, u) -> Array:
        if self.running_cost_grad_q is not None:
            return np.broadcast_to(np.asarray(self.running_cost_grad_q(q, u), dtype=float), np.shape(q))
        return fd_jacobian(lambda x: self.running_cost(x, u), q)

    def grad_u(self, q, u) -> Array:
        if self.running_cost_grad_u is not None:
            return np.broadcast_to(np.asarray(self.running_cost_grad_u(q, u), dtype=float), np.shape(u))
        return fd_jacobian(lambda v: self.running_cost(q, v), u)

    def terminal_grad(self, q) -> Array:
        if self.terminal_penalty is None:
            return np.zeros(np.shape(q))
        return self.terminal_penalty.grad(q)

    def penalty_offset(self, ensemble: WeightedEnsemble) -> float:
        """``E[I(q0)]`` for an absorbed penalty, 0 otherwise."""
        if self.absorbed_penalty is None:
            return 0.0
        return float(weighted_mean(self.absorbed_penalty(ensemble.points), ensemble.weights, 0))


def check_penalty_gradient(cost: CostSpec, probes) -> Optional[float]:
    """Largest relative deviation of the penalty gradient from finite differences."""
    pen = cost.terminal_penalty
    if pen is None or pen.gradient is None:
        return None
    worst = 0.0
    for q in probes:
        q = np.asarray(q, dtype=float)
        exact = pen.grad(q)
        approx = fd_jacobian(pen.value, q)
        scale = max(float(np.max(np.abs(approx))), 1e-12)
        worst = max(worst, float(np.max(np.abs(exact - approx))) / scale)
    return worst


def absorb_penalty(cost: CostSpec, system: ControlSystem) -> CostSpec:
    """Fold the terminal penalty into the running cost.

    Along any trajectory ``I(q(t1)) = I(q0) + int <DI(q), f(q, u)> dt``, so the
    new running cost is ``phi + <DI(q), f(q, u)>`` and the objective shifts by
    the control-independent constant ``E[I(q0)]``.
    """
    pen = cost.terminal_penalty
    if pen is None or pen.gradient is None:
        raise ContractError("absorbing a penalty requires a terminal penalty with a gradient")

    def phi_hat(q, u):
        return cost.phi(q, u) + np.einsum("...i,...i->...", pen.grad(q), system.f(q, u))

    def phi_hat_grad_q(q, u):
        q, u = system._broadcast(q, u)
        di = pen.grad(q)
        return (
            cost.grad_q(q, u)
            + np.einsum("...ij,...j->...i", pen.hess(q), system.f(q, u))
            + np.einsum("...ji,...j->...i", system.jac_q(q, u), di)
        )

    def phi_hat_grad_u(q, u):
        q, u = system._broadcast(q, u)
        return cost.grad_u(q, u) + np.einsum("...ji,...j->...i", system.jac_u(q, u), pen.grad(q))

    return CostSpec(
        running_cost=phi_hat,
        horizon=cost.horizon,
        running_cost_grad_q=phi_hat_grad_q,
        running_cost_grad_u=phi_hat_grad_u,
        terminal_penalty=None,
        penalty_mode=PenaltyMode.ABSORBED,
        control_hessian=cost.control_hessian if system.control_affine else None,
        absorbed_penalty=pen,
    )


def resolve_mode(cost: CostSpec, system: ControlSystem) -> CostSpec:
    """Return the cost in the form its ``penalty_mode`` asks for."""
    if cost.penalty_mode is PenaltyMode.ABSORBED and cost.terminal_penalty is not None:
        return absorb_penalty(cost, system)
    return cost


def with_mode(cost: CostSpec, mode: PenaltyMode) -> CostSpec:
    if cost.absorbed_penalty is not None:
        raise ContractError("cost has already been absorbed; switch modes on the original spec")
    return replace(cost, penalty_mode=mode)


def augment(system: ControlSystem, cost: CostSpec) -> ControlSystem:
    """System on ``(y, q)`` where ``y' = phi(q, u)`` accumulates the running cost."""
    n, m = system.state_dim, system.control_dim

    def f_hat(x, u):
        q = x[..., 1:]
        return np.concatenate([cost.phi(q, u)[..., None], system.f(q, u)], axis=-1)

    if system.jacobian_q is not None and cost.running_cost_grad_q is not None:

        def aug_jac_q(x, u):
            q, u = system._broadcast(x[..., 1:], u)
            out = np.zeros(q.shape[:-1] + (n + 1, n + 1))
            out[..., 0, 1:] = cost.grad_q(q, u)
            out[..., 1:, 1:] = system.jac_q(q, u)
            return out

    else:
        aug_jac_q = None

    if system.jacobian_u is not None and cost.running_cost_grad_u is not None:

        def aug_jac_u(x, u):
            q, u = system._broadcast(x[..., 1:], u)
            out = np.zeros(q.shape[:-1] + (n + 1, m))
            out[..., 0, :] = cost.grad_u(q, u)
            out[..., 1:, :] = system.jac_u(q, u)
            return out

    else:
        aug_jac_u = None

    return ControlSystem(
        state_dim=n + 1,
        control_dim=m,
        dynamics=f_hat,
        control_lower=system.control_lower,
        control_upper=system.control_upper,
        jacobian_q=aug_jac_q,
        jacobian_u=aug_jac_u,
        control_affine=False,
        name=f"augmented({system.name})",
    )


def augmented_rollout(
    system: ControlSystem, cost: CostSpec, points: Array, u_nodes: Array, grid: TimeGrid, store: bool = True
) -> Array:
    """RK4 on the augmented system for a batch of initial points and controls.

    ``points`` is ``(P, n)``.  ``u_nodes`` is ``(N + 1, m)`` for one control or
    ``(N + 1, C, m)`` for ``C`` controls.  The result has batch axes ``(P,)``
    or ``(C, P)`` and coordinate 0 holds the accumulated running cost.
    """
    aug = augment(system, cost)
    points = np.asarray(points, dtype=float)
    x0 = np.concatenate([np.zeros(points.shape[:-1] + (1,)), points], axis=-1)
    if u_nodes.ndim == 2:
        u = u_nodes[:, None, :]
    elif u_nodes.ndim == 3:
        u = u_nodes[:, :, None, :]
        x0 = np.broadcast_to(x0, (u_nodes.shape[1],) + x0.shape)
    else:
        raise ContractError(f"control nodes must be 2-D or 3-D, got shape {u_nodes.shape}")
    return rk4_nodes(aug.f, x0, u, grid.dt, store=store)


def member_costs(cost: CostSpec, final_augmented: Array) -> Array:
    """Total cost per member from final augmented states."""
    total = final_augmented[..., 0]
    if cost.penalty_mode is PenaltyMode.TERMINAL_TRANSVERSALITY and cost.terminal_penalty is not None:
        total = total + cost.terminal_penalty(final_augmented[..., 1:])
    return total


def _check_horizon(cost: CostSpec, grid: TimeGrid):
    if abs(grid.t1 - cost.horizon) > 1e-12 * max(1.0, cost.horizon):
        raise ContractError(f"grid horizon {grid.t1} differs from cost horizon {cost.horizon}")


def expected_cost(
    system: ControlSystem, cost: CostSpec, ensemble: WeightedEnsemble, u: ControlSignal, grid: TimeGrid
) -> float:
    """Probability-weighted cost of one open-loop control over the ensemble.

    In ABSORBED mode the control-independent offset ``E[I(q0)]`` is not
    included; add ``cost.penalty_offset(ensemble)`` to compare with the
    terminal-penalty form.
    """
    _check_horizon(cost, grid)
    if u.grid != grid:
        raise ContractError("control signal is defined on a different grid")
    cost = resolve_mode(cost, system)
    final = augmented_rollout(system, cost, ensemble.points, u.values, grid, store=False)
    return float(weighted_mean(member_costs(cost, final), ensemble.weights, 0))


def expected_cost_batch(
    system: ControlSystem, cost: CostSpec, ensemble: WeightedEnsemble, u_nodes: Array, grid: TimeGrid
) -> Array:
    """Expected cost for each of ``C`` controls given as ``(N + 1, C, m)`` node values."""
    cost = resolve_mode(cost, system)
    final = augmented_rollout(system, cost, ensemble.points, u_nodes, grid, store=False)
    return weighted_mean(member_costs(cost, final), ensemble.weights, 1)
