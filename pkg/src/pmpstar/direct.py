"""Direct-transcription oracle: minimize the expected cost over control node values.

Nothing here touches costates or Hamiltonians while optimizing; gradients come
from central finite differences of the expected cost, so agreement with the
indirect solver is independent evidence.  Residuals are attached afterwards
for reporting only.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np
from scipy.optimize import minimize

from .cost import expected_cost_batch, resolve_mode
from .distribution import InitialDistribution
from .dynamics import FD_STEP, ControlSignal, ControlSystem, TimeGrid
from .cost import CostSpec

DIRECT_RESIDUAL_TOL = 1e-5


def _fd_gradient(objective_batch, x: np.ndarray) -> np.ndarray:
    """Central differences of a batched objective, all perturbations in one call."""
    d = x.size
    h = FD_STEP * (1.0 + np.abs(x))
    plus = x[None, :] + np.diag(h)
    minus = x[None, :] - np.diag(h)
    vals = objective_batch(np.concatenate([plus, minus], axis=0))
    return (vals[:d] - vals[d:]) / (np.diag(plus) - np.diag(minus))


def solve_direct(
    system: ControlSystem,
    dist: InitialDistribution,
    cost: CostSpec,
    grid: TimeGrid,
    config=None,
    residual_tolerance: float = DIRECT_RESIDUAL_TOL,
):
    """Minimize the expected cost with L-BFGS-B on finite-difference gradients.

    The decision vector is the ``(n_steps + 1) * m`` control node values.
    ``converged`` reports whether the a posteriori stationarity residual is
    within ``residual_tolerance`` (finite-difference noise keeps it well
    above the indirect solver's tolerance).
    """
    from .indirect import SolveResult, SolverConfig, _Evaluator, build_ensemble, effective_cost, initial_control

    config = config or SolverConfig()
    cost_eff = effective_cost(cost, config)
    cost_r = resolve_mode(cost_eff, system)
    ensemble = build_ensemble(dist, config)
    shape = (grid.n_steps + 1, system.control_dim)
    sign = 1.0 if config.sense == "minimize" else -1.0

    def batch(xs: np.ndarray) -> np.ndarray:
        u_nodes = np.moveaxis(xs.reshape((xs.shape[0],) + shape), 0, 1)
        return sign * expected_cost_batch(system, cost_r, ensemble, u_nodes, grid)

    def fun(x):
        return float(batch(x[None, :])[0])

    def jac(x):
        return _fd_gradient(batch, x)

    bounds = list(zip(np.repeat(system.control_lower[None, :], shape[0], 0).ravel(),
                      np.repeat(system.control_upper[None, :], shape[0], 0).ravel()))
    bounds = [(None if not np.isfinite(lo) else lo, None if not np.isfinite(hi) else hi) for lo, hi in bounds]
    x0 = initial_control(system, grid, config).values.ravel()
    opt = minimize(fun, x0, jac=jac, method="L-BFGS-B", bounds=bounds,
                   options={"maxiter": config.max_iterations, "ftol": 1e-16, "gtol": 1e-13, "maxcor": 20})

    u = ControlSignal(grid, system.clip(opt.x.reshape(shape)))
    nu = -sign
    ev = _Evaluator(system, cost_r, ensemble, grid, nu)
    J, aug = ev.cost_of(u.values)
    _, r = ev.residual(u, aug)
    residual_max = float(np.max(np.abs(r)))
    return SolveResult(
        control=u,
        expected_cost=J,
        residual_max=residual_max,
        residual_profile=np.linalg.norm(r, axis=-1),
        iterations=int(opt.nit),
        converged=residual_max <= residual_tolerance,
        nu=nu,
        penalty_mode=cost_r.penalty_mode,
        penalty_offset=cost_r.penalty_offset(ensemble),
        ensemble=ensemble,
        config=replace(config, tolerance=residual_tolerance),
        diagnostics={"optimizer_message": str(opt.message), "function_evaluations": int(opt.nfev)},
    )


def grid_search_linear_family(
    system: ControlSystem,
    dist: InitialDistribution,
    cost: CostSpec,
    grid: TimeGrid,
    alpha_range: tuple[float, float],
    beta_range: tuple[float, float],
    resolution: int,
    config=None,
) -> tuple[float, float, float]:
    """Best control of the form ``u(t) = alpha * t + beta`` by exhaustive search.

    The best grid point is refined by one Newton step on the quadratic fitted
    to its 3x3 neighbourhood; the refinement is kept only if it lowers the
    cost.  Controls are clipped to the box.  Requires a scalar control.
    """
    from .indirect import SolverConfig, build_ensemble, effective_cost

    if system.control_dim != 1:
        raise ValueError("linear-family search needs a scalar control")
    if resolution < 3:
        raise ValueError("resolution must be at least 3")
    config = config or SolverConfig()
    cost_r = resolve_mode(effective_cost(cost, config), system)
    ensemble = build_ensemble(dist, config)
    t = grid.times

    def costs(alphas: np.ndarray, betas: np.ndarray) -> np.ndarray:
        u = system.clip((np.outer(t, alphas) + betas[None, :])[..., None])
        return expected_cost_batch(system, cost_r, ensemble, u, grid)

    alphas = np.linspace(*alpha_range, resolution)
    betas = np.linspace(*beta_range, resolution)
    A, B = np.meshgrid(alphas, betas, indexing="ij")
    vals = np.concatenate(
        [costs(a, b) for a, b in zip(np.array_split(A.ravel(), max(1, A.size // 2000)),
                                    np.array_split(B.ravel(), max(1, A.size // 2000)))]
    ).reshape(A.shape)
    i, j = np.unravel_index(np.argmin(vals), vals.shape)
    best = (float(alphas[i]), float(betas[j]), float(vals[i, j]))

    ic = min(max(i, 1), resolution - 2)
    jc = min(max(j, 1), resolution - 2)
    ha, hb = alphas[1] - alphas[0], betas[1] - betas[0]
    f = vals[ic - 1 : ic + 2, jc - 1 : jc + 2]
    g = np.array([(f[2, 1] - f[0, 1]) / (2 * ha), (f[1, 2] - f[1, 0]) / (2 * hb)])
    hess = np.array(
        [
            [(f[2, 1] - 2 * f[1, 1] + f[0, 1]) / ha**2, (f[2, 2] - f[2, 0] - f[0, 2] + f[0, 0]) / (4 * ha * hb)],
            [0.0, (f[1, 2] - 2 * f[1, 1] + f[1, 0]) / hb**2],
        ]
    )
    hess[1, 0] = hess[0, 1]
    if np.all(np.linalg.eigvalsh(hess) > 0):
        step = np.linalg.solve(hess, -g)
        a_new, b_new = alphas[ic] + step[0], betas[jc] + step[1]
        val = float(costs(np.array([a_new]), np.array([b_new]))[0])
        if val < best[2]:
            best = (float(a_new), float(b_new), val)
    return best
