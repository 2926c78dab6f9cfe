"""Controlled dynamics, time grids, open-loop control signals and fixed-step integration.

All user-supplied maps are evaluated in batch: a state argument has shape
``(..., n)`` and a control argument ``(..., m)`` with matching leading axes,
so a whole ensemble (or a cloud of controls) is integrated in one pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ContractError, IntegrationDivergedError

Array = np.ndarray
VectorField = Callable[[Array, Array], Array]

FD_STEP = 1e-6


def fd_jacobian(fun: Callable[[Array], Array], x: Array, step: float = FD_STEP) -> Array:
    """Central finite-difference derivative of a batched map.

    ``fun`` maps ``(..., d) -> (..., p)`` or ``(..., d) -> (...)``; the result has
    shape ``(..., p, d)`` or ``(..., d)`` respectively.  Each coordinate is
    perturbed by ``step * (1 + |x_j|)``.
    """
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(x.shape[-1]):
        h = step * (1.0 + np.abs(x[..., j]))
        xp = x.copy()
        xm = x.copy()
        xp[..., j] += h
        xm[..., j] -= h
        denom = xp[..., j] - xm[..., j]
        diff = np.asarray(fun(xp), dtype=float) - np.asarray(fun(xm), dtype=float)
        if diff.ndim > denom.ndim:
            denom = denom[..., None]
        cols.append(diff / denom)
    return np.stack(cols, axis=-1)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on ``[0, t1]`` with ``n_steps`` intervals."""

    t1: float
    n_steps: int

    def __post_init__(self):
        if not (np.isfinite(self.t1) and self.t1 > 0):
            raise ContractError(f"horizon t1 must be positive, got {self.t1}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ContractError(f"n_steps must be a positive integer, got {self.n_steps}")
        object.__setattr__(self, "t1", float(self.t1))
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @property
    def t0(self) -> float:
        return 0.0

    @property
    def dt(self) -> float:
        return self.t1 / self.n_steps

    @property
    def times(self) -> Array:
        return np.arange(self.n_steps + 1) * self.dt

    @property
    def node_weights(self) -> Array:
        """Integration weight of each node for hat-function (piecewise-linear) controls."""
        w = np.full(self.n_steps + 1, self.dt)
        w[0] = w[-1] = 0.5 * self.dt
        return w


@dataclass(frozen=True)
class ControlSignal:
    """Open-loop control: node values on a grid, linearly interpolated in between."""

    grid: TimeGrid
    values: Array

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] != self.grid.n_steps + 1:
            raise ContractError(
                f"control values must have shape ({self.grid.n_steps + 1}, m), got {v.shape}"
            )
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, grid: TimeGrid, value) -> "ControlSignal":
        value = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(grid, np.tile(value, (grid.n_steps + 1, 1)))

    @classmethod
    def from_function(cls, grid: TimeGrid, fn: Callable[[float], object]) -> "ControlSignal":
        return cls(grid, np.array([np.atleast_1d(fn(t)) for t in grid.times], dtype=float))

    @property
    def control_dim(self) -> int:
        return self.values.shape[1]

    def __call__(self, t) -> Array:
        t = np.asarray(t, dtype=float)
        out = np.stack(
            [np.interp(t, self.grid.times, self.values[:, j]) for j in range(self.control_dim)],
            axis=-1,
        )
        return out

    def clipped(self, lower: Array, upper: Array) -> "ControlSignal":
        return ControlSignal(self.grid, np.clip(self.values, lower, upper))


@dataclass(frozen=True)
class ControlSystem:
    """Controlled vector field ``q' = f(q, u)`` with a box of admissible controls.

    Parameters
    ----------
    state_dim, control_dim : int
        Dimensions of the state and control.
    dynamics : callable
        Batched vector field ``f(q, u)``.
    control_lower, control_upper : array-like, optional
        Box bounds on the control; infinite entries are allowed.  Defaults to
        the whole space.
    jacobian_q, jacobian_u : callable, optional
        Analytic ``df/dq`` of shape ``(..., n, n)`` and ``df/du`` of shape
        ``(..., n, m)``.  Central finite differences are used when omitted.
    control_affine : bool
        Declares ``f`` affine in ``u``; enables closed-form Hamiltonian maximization.
    """

    state_dim: int
    control_dim: int
    dynamics: VectorField
    control_lower: Optional[Sequence[float]] = None
    control_upper: Optional[Sequence[float]] = None
    jacobian_q: Optional[Callable[[Array, Array], Array]] = None
    jacobian_u: Optional[Callable[[Array, Array], Array]] = None
    control_affine: bool = False
    name: str = field(default="", compare=False)

    def __post_init__(self):
        if self.state_dim < 1 or self.control_dim < 1:
            raise ContractError("state_dim and control_dim must be positive")
        m = self.control_dim
        lo = np.full(m, -np.inf) if self.control_lower is None else np.asarray(self.control_lower, float)
        hi = np.full(m, np.inf) if self.control_upper is None else np.asarray(self.control_upper, float)
        lo = np.broadcast_to(lo, (m,)).copy()
        hi = np.broadcast_to(hi, (m,)).copy()
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)) or np.any(lo > hi):
            raise ContractError(f"invalid control box [{lo}, {hi}]")
        object.__setattr__(self, "control_lower", lo)
        object.__setattr__(self, "control_upper", hi)

    def _broadcast(self, q, u):
        q = np.asarray(q, dtype=float)
        u = np.asarray(u, dtype=float)
        if u.ndim == 0:
            u = u[None]
        batch = np.broadcast_shapes(q.shape[:-1], u.shape[:-1])
        return (
            np.broadcast_to(q, batch + (self.state_dim,)),
            np.broadcast_to(u, batch + (self.control_dim,)),
        )

    def f(self, q, u) -> Array:
        q, u = self._broadcast(q, u)
        return np.asarray(self.dynamics(q, u), dtype=float)

    def jac_q(self, q, u) -> Array:
        q, u = self._broadcast(q, u)
        if self.jacobian_q is not None:
            return np.broadcast_to(
                np.asarray(self.jacobian_q(q, u), dtype=float), q.shape + (self.state_dim,)
            )
        return fd_jacobian(lambda x: self.dynamics(x, u), q)

    def jac_u(self, q, u) -> Array:
        q, u = self._broadcast(q, u)
        if self.jacobian_u is not None:
            return np.broadcast_to(
                np.asarray(self.jacobian_u(q, u), dtype=float),
                q.shape[:-1] + (self.state_dim, self.control_dim),
            )
        return fd_jacobian(lambda v: self.dynamics(q, v), u)

    @property
    def bounded(self) -> bool:
        return bool(np.all(np.isfinite(self.control_lower)) and np.all(np.isfinite(self.control_upper)))

    def clip(self, u) -> Array:
        return np.clip(u, self.control_lower, self.control_upper)


@dataclass(frozen=True)
class Trajectory:
    """States at the grid nodes; ``states`` has shape ``(n_steps + 1, ..., n)``."""

    grid: TimeGrid
    states: Array

    @property
    def final(self) -> Array:
        return self.states[-1]


@dataclass(frozen=True)
class CostateTrajectory:
    """Costates at the grid nodes; same layout as :class:`Trajectory`."""

    grid: TimeGrid
    costates: Array


def rk4_nodes(
    field_fn: VectorField, x0: Array, u_nodes: Array, dt: float, what: str = "state", store: bool = True
) -> Array:
    """Classical RK4 over a uniform grid with linearly interpolated control.

    ``u_nodes`` has shape ``(N + 1, ..., m)`` broadcastable against ``x0``'s
    batch axes.  Returns the node values, shape ``(N + 1, ..., d)``, or only
    the final value when ``store`` is false.
    """
    x = np.array(x0, dtype=float)
    n = u_nodes.shape[0] - 1
    out = np.empty((n + 1,) + x.shape) if store else None
    if store:
        out[0] = x
    half = 0.5 * dt
    sixth = dt / 6.0
    for k in range(n):
        ua = u_nodes[k]
        ub = u_nodes[k + 1]
        um = 0.5 * (ua + ub)
        k1 = field_fn(x, ua)
        k2 = field_fn(x + half * k1, um)
        k3 = field_fn(x + half * k2, um)
        k4 = field_fn(x + dt * k3, ub)
        x = x + sixth * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise IntegrationDivergedError(k + 1, what)
        if store:
            out[k + 1] = x
    return out if store else x


def _check_control(system: ControlSystem, u: ControlSignal, grid: TimeGrid):
    if u.grid != grid:
        raise ContractError("control signal is defined on a different grid")
    if u.control_dim != system.control_dim:
        raise ContractError(f"control has dimension {u.control_dim}, system expects {system.control_dim}")


def integrate_forward(system: ControlSystem, q0, u: ControlSignal, grid: TimeGrid) -> Trajectory:
    """Integrate ``q' = f(q, u(t))`` from ``q0`` with fixed-step RK4.

    ``q0`` may carry leading batch axes, in which case every member is driven
    by the same control.
    """
    _check_control(system, u, grid)
    q0 = np.asarray(q0, dtype=float)
    if q0.shape[-1:] != (system.state_dim,):
        raise ContractError(f"initial state must have trailing dimension {system.state_dim}")
    u_nodes = u.values.reshape((grid.n_steps + 1,) + (1,) * (q0.ndim - 1) + (system.control_dim,))
    states = rk4_nodes(system.f, q0, u_nodes, grid.dt)
    states[0] = q0
    return Trajectory(grid, states)


def hermite_midpoints(system: ControlSystem, traj: Trajectory, u: ControlSignal) -> Array:
    """Cubic Hermite estimate of the state halfway between consecutive nodes."""
    x = traj.states
    u_nodes = u.values.reshape((x.shape[0],) + (1,) * (x.ndim - 2) + (system.control_dim,))
    fx = system.f(x, u_nodes)
    return 0.5 * (x[:-1] + x[1:]) + (traj.grid.dt / 8.0) * (fx[:-1] - fx[1:])


def integrate_costate_backward(
    system: ControlSystem,
    traj: Trajectory,
    u: ControlSignal,
    lambda_t1,
    nu: float,
    running_cost_grad_q: Optional[Callable[[Array, Array], Array]] = None,
) -> CostateTrajectory:
    """Integrate ``lambda' = -(df/dq)^T lambda - nu * grad_q phi`` backward from ``t1``.

    RK4 on the reversed grid.  The equation is linear in the costate, so the
    coefficient matrices are evaluated once at the nodes and at interval
    midpoints (states there come from cubic Hermite interpolation).
    """
    grid = traj.grid
    _check_control(system, u, grid)
    x = traj.states
    if x.shape[0] != grid.n_steps + 1:
        raise ContractError("trajectory length does not match its grid")
    lam_end = np.array(np.broadcast_to(np.asarray(lambda_t1, dtype=float), x.shape[1:]))
    batch_ones = (1,) * (x.ndim - 2)
    u_nodes = u.values.reshape((grid.n_steps + 1,) + batch_ones + (system.control_dim,))
    u_mid = 0.5 * (u_nodes[:-1] + u_nodes[1:])
    x_mid = hermite_midpoints(system, traj, u)

    a_node = np.swapaxes(system.jac_q(x, u_nodes), -1, -2)
    a_mid = np.swapaxes(system.jac_q(x_mid, u_mid), -1, -2)
    if nu != 0.0:
        if running_cost_grad_q is None:
            raise ContractError("running cost gradient required when nu != 0")
        b_node = nu * np.asarray(running_cost_grad_q(*system._broadcast(x, u_nodes)), dtype=float)
        b_mid = nu * np.asarray(running_cost_grad_q(*system._broadcast(x_mid, u_mid)), dtype=float)
    else:
        b_node = np.zeros_like(x)
        b_mid = np.zeros_like(x_mid)

    def rhs(a, b, lam):
        # d(lambda)/ds in reversed time s = t1 - t
        return np.einsum("...ij,...j->...i", a, lam) + b

    dt = grid.dt
    out = np.empty_like(x)
    out[-1] = lam_end
    lam = lam_end
    for k in range(grid.n_steps - 1, -1, -1):
        k1 = rhs(a_node[k + 1], b_node[k + 1], lam)
        k2 = rhs(a_mid[k], b_mid[k], lam + 0.5 * dt * k1)
        k3 = rhs(a_mid[k], b_mid[k], lam + 0.5 * dt * k2)
        k4 = rhs(a_node[k], b_node[k], lam + dt * k3)
        lam = lam + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(lam)):
            raise IntegrationDivergedError(k, "costate")
        out[k] = lam
    return CostateTrajectory(grid, out)


def _relative_deviation(analytic: Array, numeric: Array) -> float:
    scale = max(float(np.max(np.abs(numeric))), 1e-12)
    return float(np.max(np.abs(analytic - numeric))) / scale


def check_jacobians(system: ControlSystem, probes) -> dict:
    """Compare analytic Jacobians with central finite differences.

    Returns ``{"jacobian_q": dev, "jacobian_u": dev}`` holding the largest
    relative deviation over the probes, with keys only for the Jacobians the
    system actually supplies.
    """
    report = {}
    for key, analytic, wrt in (
        ("jacobian_q", system.jacobian_q, "q"),
        ("jacobian_u", system.jacobian_u, "u"),
    ):
        if analytic is None:
            continue
        worst = 0.0
        for q, u in probes:
            q, u = system._broadcast(q, u)
            exact = np.asarray(analytic(q, u), dtype=float)
            if wrt == "q":
                approx = fd_jacobian(lambda x: system.dynamics(x, u), q)
            else:
                approx = fd_jacobian(lambda v: system.dynamics(q, v), u)
            worst = max(worst, _relative_deviation(np.broadcast_to(exact, approx.shape), approx))
        report[key] = worst
    return report
