"""Generalized Hamiltonian family, its ensemble expectation and stationarity residuals.

For a multiplier ``nu`` the Hamiltonian is ``h(lambda, q, u) = <lambda, f(q, u)> + nu * phi(q, u)``.
Each ensemble member carries its own costate; the control is shared, and the
maximum condition applies to the probability-weighted sum over members.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cost import CostSpec, PenaltyMode
from .distribution import WeightedEnsemble, weighted_mean
from .dynamics import (
    Array,
    ControlSignal,
    ControlSystem,
    TimeGrid,
    Trajectory,
    integrate_costate_backward,
    integrate_forward,
)
from .errors import AbnormalStructureError, ContractError

NORMAL_NU = {"minimize": -1.0, "maximize": 1.0}


def check_nu(nu: float, sense: str = "minimize") -> float:
    """Validate the multiplier: 0 (abnormal) or the normal value for ``sense``."""
    if sense not in NORMAL_NU:
        raise ContractError(f"sense must be 'minimize' or 'maximize', got {sense!r}")
    if nu not in (0.0, NORMAL_NU[sense]):
        raise ContractError(f"nu must be 0 or {NORMAL_NU[sense]:+g} when sense={sense!r}, got {nu}")
    return float(nu)


@dataclass(frozen=True)
class EnsembleExtremal:
    """States and costates of every ensemble member under one shared control.

    ``states`` and ``costates`` have shape ``(n_steps + 1, N, n)``.
    """

    grid: TimeGrid
    control: ControlSignal
    weights: Array
    states: Array
    costates: Array
    nu: float

    @property
    def size(self) -> int:
        return self.weights.shape[0]


def terminal_costates(cost: CostSpec, final_states: Array, nu: float) -> Array:
    """Transversality: ``nu * DI(q(t1))`` with a terminal penalty, zero when absorbed or absent."""
    if cost.penalty_mode is PenaltyMode.TERMINAL_TRANSVERSALITY and cost.terminal_penalty is not None:
        return nu * cost.terminal_grad(final_states)
    return np.zeros_like(final_states)


def build_extremal(
    system: ControlSystem,
    cost: CostSpec,
    ensemble: WeightedEnsemble,
    u: ControlSignal,
    grid: TimeGrid,
    nu: float,
    states: Optional[Array] = None,
) -> EnsembleExtremal:
    """Forward rollouts plus backward costate sweeps for all members.

    ``cost`` must already be in its resolved form (see ``cost.resolve_mode``).
    Precomputed ``states`` may be passed to skip the forward pass.
    """
    if states is None:
        states = integrate_forward(system, ensemble.points, u, grid).states
    traj = Trajectory(grid, states)
    lam_t1 = terminal_costates(cost, states[-1], nu)
    costates = integrate_costate_backward(system, traj, u, lam_t1, nu, cost.grad_q).costates
    return EnsembleExtremal(grid, u, ensemble.weights, states, costates, nu)


def hamiltonian_value(lam, q, u, nu: float, system: ControlSystem, cost: CostSpec) -> Array:
    """``<lambda, f(q, u)> + nu * phi(q, u)`` (batched)."""
    q, u = system._broadcast(q, u)
    val = np.einsum("...i,...i->...", np.asarray(lam, dtype=float), system.f(q, u))
    if nu != 0.0:
        val = val + nu * cost.phi(q, u)
    return val


def expected_hamiltonian(
    ext: EnsembleExtremal, u, t_index: int, nu: float, system: ControlSystem, cost: CostSpec
) -> float:
    """Weighted Hamiltonian at node ``t_index`` with trial control ``u`` applied to every member."""
    if not 0 <= t_index <= ext.grid.n_steps:
        raise ContractError(f"node index {t_index} outside grid")
    u = np.atleast_1d(np.asarray(u, dtype=float))
    h = hamiltonian_value(ext.costates[t_index], ext.states[t_index], u, nu, system, cost)
    return float(weighted_mean(h, ext.weights, 0))


def hamiltonian_profile(ext: EnsembleExtremal, system: ControlSystem, cost: CostSpec) -> Array:
    """``t -> E h`` at every node, evaluated with the extremal's own control."""
    u = ext.control.values[:, None, :]
    h = hamiltonian_value(ext.costates, ext.states, u, ext.nu, system, cost)
    return weighted_mean(h, ext.weights, 1)


def _control_gradient(ext: EnsembleExtremal, nu: float, system: ControlSystem, cost: CostSpec, u_nodes: Array) -> Array:
    """``d/du E h`` at each node for node controls ``u_nodes`` of shape ``(N + 1, m)``."""
    q, u = system._broadcast(ext.states, u_nodes[:, None, :])
    g = np.einsum("...ji,...j->...i", system.jac_u(q, u), ext.costates)
    if nu != 0.0:
        g = g + nu * cost.grad_u(q, u)
    return weighted_mean(g, ext.weights, 1)


def stationarity_residual(ext: EnsembleExtremal, nu: float, system: ControlSystem, cost: CostSpec) -> Array:
    """Projected gradient of the expected Hamiltonian in ``u`` at each node, shape ``(N + 1, m)``.

    Components are zeroed where the control sits on a bound and the gradient
    points out of the box.
    """
    u = ext.control.values
    g = _control_gradient(ext, nu, system, cost, u)
    lo, hi = system.control_lower, system.control_upper
    at_hi = u >= hi - 1e-12 * (1.0 + np.abs(np.where(np.isfinite(hi), hi, 0.0)))
    at_lo = u <= lo + 1e-12 * (1.0 + np.abs(np.where(np.isfinite(lo), lo, 0.0)))
    g = np.where(at_hi & (g > 0), 0.0, g)
    g = np.where(at_lo & (g < 0), 0.0, g)
    return g


@dataclass(frozen=True)
class SearchConfig:
    tol: float = 1e-10
    max_sweeps: int = 60
    flat_tol: float = 1e-12


_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def _golden_max(fn, a: float, b: float, tol: float) -> float:
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = fn(c), fn(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = fn(d)
    return 0.5 * (a + b)


def _bracket(fn, x0: float, lo: float, hi: float, node: int):
    """Finite interval containing a maximizer of a 1-D slice, expanding toward infinite bounds."""
    if math.isfinite(lo) and math.isfinite(hi):
        return lo, hi
    step = 1.0
    f0 = fn(x0)
    curvature = fn(x0 + step) - 2.0 * f0 + fn(x0 - step)
    if curvature >= 0.0:
        raise AbnormalStructureError(node, f"expected Hamiltonian is not concave in u at node {node}")
    a, b = x0 - step, x0 + step
    if not math.isfinite(hi):
        while fn(b + step) > fn(b):
            b += step
            step *= 2.0
            if step > 1e12:
                raise AbnormalStructureError(node)
    step = 1.0
    if not math.isfinite(lo):
        while fn(a - step) > fn(a):
            a -= step
            step *= 2.0
            if step > 1e12:
                raise AbnormalStructureError(node)
    return max(a, lo), min(b, hi)


def pointwise_maximize(
    ext: EnsembleExtremal,
    t_index: int,
    nu: float,
    system: ControlSystem,
    cost: CostSpec,
    search: Optional[SearchConfig] = None,
) -> Array:
    """Maximizer over the control box of the expected Hamiltonian at one node.

    Closed form when the dynamics are control-affine and ``phi`` is registered
    as quadratic in ``u``; otherwise cyclic golden-section search per
    coordinate.  Flat directions resolve to the admissible value of smallest
    magnitude.
    """
    search = search or SearchConfig()
    m = system.control_dim
    lo, hi = system.control_lower, system.control_upper
    zero = np.zeros((1, m))

    if system.control_affine and (nu == 0.0 or cost.control_hessian is not None):
        single = EnsembleExtremal(
            ext.grid, ext.control, ext.weights, ext.states[t_index : t_index + 1],
            ext.costates[t_index : t_index + 1], ext.nu,
        )
        g0 = _control_gradient(single, nu, system, cost, zero)[0]
        if nu == 0.0:
            scale = float(weighted_mean(np.abs(ext.costates[t_index]).sum(-1), ext.weights, 0))
            out = np.clip(np.zeros(m), lo, hi)
            for j in range(m):
                if abs(g0[j]) <= search.flat_tol * (1.0 + scale):
                    continue
                bound = hi[j] if g0[j] > 0 else lo[j]
                if not math.isfinite(bound):
                    raise AbnormalStructureError(t_index)
                out[j] = bound
            return out
        curv = nu * cost.control_hessian
        diagonal = np.count_nonzero(curv - np.diag(np.diag(curv))) == 0
        if np.all(np.linalg.eigvalsh(curv) < 0):
            u_star = np.linalg.solve(-curv, g0)
            if np.all((u_star >= lo) & (u_star <= hi)) or diagonal:
                return np.clip(u_star, lo, hi)

    def value(v):
        return expected_hamiltonian(ext, v, t_index, nu, system, cost)

    u = np.clip(ext.control.values[t_index].copy(), lo, hi)
    for _ in range(search.max_sweeps):
        prev = u.copy()
        for j in range(m):

            def slice_fn(x, j=j):
                trial = u.copy()
                trial[j] = x
                return value(trial)

            a, b = _bracket(slice_fn, float(u[j]), float(lo[j]), float(hi[j]), t_index)
            u[j] = _golden_max(slice_fn, a, b, search.tol)
        if np.max(np.abs(u - prev)) <= search.tol:
            break
    return u


def abnormal_diagnostic(
    system: ControlSystem, cost: CostSpec, ensemble: WeightedEnsemble, u: ControlSignal, grid: TimeGrid,
    states: Optional[Array] = None,
) -> dict:
    """Test whether ``nu = 0`` admits a nontrivial costate along the current rollout.

    With ``nu = 0`` the transversality data vanish, so the costate family is
    identically zero and the abnormal case fails nontriviality; the report
    states that explicitly rather than assuming it.
    """
    ext = build_extremal(system, cost, ensemble, u, grid, 0.0, states=states)
    lam_max = float(np.max(np.abs(ext.costates)))
    g = _control_gradient(ext, 0.0, system, cost, u.values)
    flat = bool(np.max(np.abs(g)) <= 1e-12 * (1.0 + lam_max))
    trivial = lam_max == 0.0
    return {
        "costate_max": lam_max,
        "costate_trivial": trivial,
        "flat_in_u": flat,
        "candidate": bool(flat and not trivial),
    }
