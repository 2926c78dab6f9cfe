"""Indirect open-loop solver built on the expected-Hamiltonian maximum condition.

Each iteration rolls every ensemble member forward under the shared control,
sweeps each member's costate backward, and moves the control uphill on the
expected Hamiltonian.  A fixed point is a control whose stationarity residual
vanishes at every node.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .cost import CostSpec, PenaltyMode, augmented_rollout, member_costs, resolve_mode, with_mode
from .distribution import Dirac, InitialDistribution, WeightedEnsemble, quadrature_nodes, sample, weighted_mean
from .dynamics import ControlSignal, ControlSystem, TimeGrid
from .errors import AbnormalStructureError, ContractError
from .hamiltonian import (
    NORMAL_NU,
    abnormal_diagnostic,
    build_extremal,
    expected_hamiltonian,
    hamiltonian_profile,
    pointwise_maximize,
    stationarity_residual,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverConfig:
    """Iteration, line-search and ensemble settings shared by both solvers.

    ``sample_size`` switches from Gauss-Hermite quadrature to seeded Monte
    Carlo.  ``initial_control`` is a scalar or an ``(n_steps + 1, m)`` array.
    """

    tolerance: float = 1e-8
    max_iterations: int = 5000
    initial_step: float = 1.0
    armijo_c: float = 1e-4
    armijo_shrink: float = 0.5
    max_backtracks: int = 60
    memory: int = 10
    patience: int = 25
    quadrature_order: int = 5
    sample_size: Optional[int] = None
    seed: int = 0
    penalty_mode: Optional[PenaltyMode] = None
    initial_control: object = 0.0
    sense: str = "minimize"

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ContractError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ContractError("max_iterations must be at least 1")
        if not 0 < self.armijo_shrink < 1 or not 0 < self.armijo_c < 1:
            raise ContractError("Armijo parameters must lie in (0, 1)")
        if self.sense not in NORMAL_NU:
            raise ContractError(f"sense must be one of {sorted(NORMAL_NU)}")


@dataclass
class SolveResult:
    control: ControlSignal
    expected_cost: float
    residual_max: float
    residual_profile: np.ndarray
    iterations: int
    converged: bool
    nu: float
    penalty_mode: PenaltyMode
    penalty_offset: float
    ensemble: WeightedEnsemble
    config: SolverConfig
    diagnostics: dict = field(default_factory=dict)

    @property
    def total_cost(self) -> float:
        """Expected cost including the absorbed constant, comparable across penalty modes."""
        return self.expected_cost + self.penalty_offset


def build_ensemble(dist: InitialDistribution, config: SolverConfig) -> WeightedEnsemble:
    if config.sample_size is not None and not isinstance(dist, Dirac):
        return sample(dist, config.sample_size, config.seed)
    return quadrature_nodes(dist, config.quadrature_order)


def effective_cost(cost: CostSpec, config: SolverConfig) -> CostSpec:
    if config.penalty_mode is not None and config.penalty_mode is not cost.penalty_mode:
        return with_mode(cost, config.penalty_mode)
    return cost


def initial_control(system: ControlSystem, grid: TimeGrid, config: SolverConfig) -> ControlSignal:
    init = np.asarray(config.initial_control, dtype=float)
    if init.ndim <= 1:
        u = ControlSignal.constant(grid, np.broadcast_to(init, (system.control_dim,)))
    else:
        u = ControlSignal(grid, init)
    return ControlSignal(grid, system.clip(u.values))


class _Evaluator:
    """Rollouts, costates and residuals for one control on a fixed ensemble."""

    def __init__(self, system, cost, ensemble, grid, nu):
        self.system, self.cost, self.ensemble, self.grid, self.nu = system, cost, ensemble, grid, nu

    def cost_of(self, values: np.ndarray) -> tuple[float, np.ndarray]:
        aug = augmented_rollout(self.system, self.cost, self.ensemble.points, values, self.grid)
        return float(weighted_mean(member_costs(self.cost, aug[-1]), self.ensemble.weights, 0)), aug

    def residual(self, u: ControlSignal, aug: np.ndarray):
        ext = build_extremal(self.system, self.cost, self.ensemble, u, self.grid, self.nu, states=aug[..., 1:])
        return ext, stationarity_residual(ext, self.nu, self.system, self.cost)


def _wdot(w, a, b) -> float:
    return float(np.sum(w[:, None] * a * b))


def solve_pmp_star(
    system: ControlSystem,
    dist: InitialDistribution,
    cost: CostSpec,
    grid: TimeGrid,
    config: Optional[SolverConfig] = None,
) -> SolveResult:
    """Find an open-loop control satisfying the expected-Hamiltonian maximum condition.

    Solves the normal case (``nu = -1``, or ``+1`` when maximizing).  The
    search direction is the residual itself, i.e. steepest ascent on the
    expected Hamiltonian in the node-weighted L2 metric, refined by an L-BFGS
    two-loop recursion; components pinned at a bound are dropped and the
    step is projected back onto the control box.  Steps are accepted
    by Armijo backtracking on the expected cost, so the cost never increases
    between accepted iterates.
    """
    config = config or SolverConfig()
    cost = effective_cost(cost, config)
    if abs(grid.t1 - cost.horizon) > 1e-12 * max(1.0, cost.horizon):
        raise ContractError(f"grid horizon {grid.t1} differs from cost horizon {cost.horizon}")
    cost_r = resolve_mode(cost, system)
    ensemble = build_ensemble(dist, config)
    if ensemble.dim != system.state_dim:
        raise ContractError(f"distribution dimension {ensemble.dim} != state_dim {system.state_dim}")
    nu = NORMAL_NU[config.sense]
    sigma = -nu  # merit = sigma * J is minimized
    ev = _Evaluator(system, cost_r, ensemble, grid, nu)
    w = grid.node_weights
    bounded = bool(np.any(np.isfinite(system.control_lower)) or np.any(np.isfinite(system.control_upper)))

    u = initial_control(system, grid, config)
    J, aug = ev.cost_of(u.values)
    ext, r = ev.residual(u, aug)
    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    steps, costs, residuals = [], [J], [float(np.max(np.abs(r)))]
    gamma = config.initial_step
    converged = False
    stalled = False
    it = 0
    prev_active = None
    flat_steps = 0
    while True:
        res_max = float(np.max(np.abs(r)))
        if res_max <= config.tolerance:
            converged = True
            break
        if it >= config.max_iterations:
            break
        if flat_steps >= config.patience:
            stalled = True
            log.info("no cost progress for %d iterations (residual %.3e)", flat_steps, res_max)
            break
        # merit gradient in the node-weighted metric is -r
        grad = -r
        if bounded:
            active = _active_set(u.values, r, system)
            if prev_active is not None and np.any(active != prev_active):
                s_hist.clear()
                y_hist.clear()
            prev_active = active
        d = _two_loop(grad, s_hist, y_hist, w) if s_hist else -gamma * grad
        if bounded:
            d = np.where(active, 0.0, d)
        if _wdot(w, d, grad) >= 0.0:
            s_hist.clear()
            y_hist.clear()
            d = -gamma * grad
        step = 1.0
        merit = sigma * J
        slack = 1e-14 * (1.0 + abs(J))
        accepted = False
        for _ in range(config.max_backtracks):
            trial = ControlSignal(grid, system.clip(u.values + step * d))
            J_new, aug_new = ev.cost_of(trial.values)
            decrease = _wdot(w, grad, trial.values - u.values)
            if sigma * J_new <= merit + config.armijo_c * decrease + slack and np.isfinite(J_new):
                accepted = True
                break
            step *= config.armijo_shrink
        if not accepted:
            stalled = True
            log.info("line search stalled at iteration %d (residual %.3e)", it, res_max)
            break
        ext_new, r_new = ev.residual(trial, aug_new)
        s_vec = trial.values - u.values
        y_vec = -(r_new - r)
        if bounded:
            free = ~(active | _active_set(trial.values, r_new, system))
            s_vec, y_vec = s_vec * free, y_vec * free
        sy = _wdot(w, s_vec, y_vec)
        if sy > 1e-16 * np.sqrt(_wdot(w, s_vec, s_vec) * _wdot(w, y_vec, y_vec)):
            s_hist.append(s_vec)
            y_hist.append(y_vec)
            if len(s_hist) > config.memory:
                s_hist.pop(0)
                y_hist.pop(0)
            gamma = sy / _wdot(w, y_vec, y_vec)
        flat_steps = flat_steps + 1 if abs(J_new - J) <= slack else 0
        u, J, aug, ext, r = trial, J_new, aug_new, ext_new, r_new
        it += 1
        steps.append(step)
        costs.append(J)
        residuals.append(float(np.max(np.abs(r))))

    profile = np.linalg.norm(r, axis=-1)
    diagnostics = {
        "step_sizes": steps,
        "cost_history": costs,
        "residual_history": residuals,
        "stalled": stalled,
        "abnormal": abnormal_diagnostic(system, cost_r, ensemble, u, grid, states=aug[..., 1:]),
        "hamiltonian_profile": hamiltonian_profile(ext, system, cost_r),
    }
    gaps, abnormal_nodes = _max_condition_gaps(ext, nu, system, cost_r)
    diagnostics["max_condition_gap"] = gaps
    diagnostics["abnormal_structure_nodes"] = abnormal_nodes
    return SolveResult(
        control=u,
        expected_cost=J,
        residual_max=float(np.max(np.abs(r))),
        residual_profile=profile,
        iterations=it,
        converged=converged,
        nu=nu,
        penalty_mode=cost_r.penalty_mode,
        penalty_offset=cost_r.penalty_offset(ensemble),
        ensemble=ensemble,
        config=config,
        diagnostics=diagnostics,
    )


def _active_set(u, r, system):
    """Components held at a bound: on it, with the ascent direction pointing outward (r is already zero there)."""
    lo, hi = system.control_lower, system.control_upper
    return ((u >= hi) | (u <= lo)) & (r == 0.0)


def _two_loop(grad, s_hist, y_hist, w):
    q = grad.copy()
    alphas = []
    for s, y in zip(reversed(s_hist), reversed(y_hist)):
        rho = 1.0 / _wdot(w, y, s)
        a = rho * _wdot(w, s, q)
        alphas.append((rho, a))
        q = q - a * y
    s, y = s_hist[-1], y_hist[-1]
    q = q * (_wdot(w, s, y) / _wdot(w, y, y))
    for (s, y), (rho, a) in zip(zip(s_hist, y_hist), reversed(alphas)):
        b = rho * _wdot(w, y, q)
        q = q + (a - b) * s
    return -q


def _max_condition_gaps(ext, nu, system, cost):
    """Per-node ``max_v E h(v) - E h(u_k)``; nodes where the maximum is unbounded are listed separately."""
    gaps = np.full(ext.grid.n_steps + 1, np.nan)
    abnormal = []
    for k in range(ext.grid.n_steps + 1):
        try:
            v = pointwise_maximize(ext, k, nu, system, cost)
        except AbnormalStructureError:
            abnormal.append(k)
            continue
        gaps[k] = expected_hamiltonian(ext, v, k, nu, system, cost) - expected_hamiltonian(
            ext, ext.control.values[k], k, nu, system, cost
        )
    return gaps, abnormal


def solve_pmp(
    system: ControlSystem, q0, cost: CostSpec, grid: TimeGrid, config: Optional[SolverConfig] = None
) -> SolveResult:
    """Deterministic special case: a single known initial state."""
    return solve_pmp_star(system, Dirac(q0), cost, grid, config)


@dataclass
class ExtremalReport:
    checks: dict
    details: dict
    failed_nodes: list

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def lines(self) -> list[str]:
        return [f"{'PASS' if ok else 'FAIL'}  {name}: {self.details.get(name, '')}" for name, ok in self.checks.items()]


def verify_extremal(
    result: SolveResult,
    system: ControlSystem,
    dist: InitialDistribution,
    cost: CostSpec,
    grid: TimeGrid,
    residual_tol: Optional[float] = None,
    constancy_tol: float = 1e-5,
    n_perturbations: int = 100,
    perturbation_scale: float = 1e-3,
    cost_tol: Optional[float] = None,
    seed: int = 0,
) -> ExtremalReport:
    """Re-check the optimality conditions of a result from scratch.

    Checks: node residuals within tolerance, constancy of ``t -> E h``,
    nontriviality of ``(lambda, nu)``, and that no random perturbation of the
    control lowers the expected cost by more than ``cost_tol``.
    """
    config = result.config
    residual_tol = config.tolerance if residual_tol is None else residual_tol
    cost_r = resolve_mode(effective_cost(cost, config), system)
    ensemble = build_ensemble(dist, config)
    nu = result.nu
    ev = _Evaluator(system, cost_r, ensemble, grid, nu)
    u = result.control
    J, aug = ev.cost_of(u.values)
    ext, r = ev.residual(u, aug)
    norms = np.linalg.norm(r, axis=-1)
    bad = [int(k) for k in np.flatnonzero(norms > residual_tol)]

    checks, details = {}, {}
    checks["residual"] = not bad
    details["residual"] = f"max {norms.max():.3e} (tol {residual_tol:.1e}), failing nodes {bad[:10]}"

    prof = hamiltonian_profile(ext, system, cost_r)
    spread = float(prof.max() - prof.min())
    limit = constancy_tol * (1.0 + float(np.max(np.abs(prof))))
    checks["hamiltonian_constancy"] = spread <= limit
    details["hamiltonian_constancy"] = f"spread {spread:.3e} (limit {limit:.3e})"

    lam_max = float(np.max(np.abs(ext.costates)))
    checks["nontrivial"] = lam_max > 0.0 or nu != 0.0
    details["nontrivial"] = f"nu={nu:+g}, max|lambda|={lam_max:.3e}"

    cost_tol = 1e-9 * (1.0 + abs(J)) if cost_tol is None else cost_tol
    rng = np.random.Generator(np.random.Philox(seed))
    amp = perturbation_scale * (1.0 + float(np.max(np.abs(u.values))))
    sigma = -nu if nu != 0.0 else 1.0
    worst = 0.0
    for _ in range(n_perturbations):
        delta = rng.uniform(-amp, amp, size=u.values.shape)
        J_p, _ = ev.cost_of(system.clip(u.values + delta))
        worst = max(worst, sigma * (J - J_p))
    checks["perturbation"] = worst <= cost_tol
    details["perturbation"] = f"largest improvement {worst:.3e} over {n_perturbations} draws (tol {cost_tol:.1e})"
    return ExtremalReport(checks, details, bad)
