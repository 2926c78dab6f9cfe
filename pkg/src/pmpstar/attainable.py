"""Monte Carlo probe of the expected attainable set of the cost-augmented system."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cost import CostSpec, augmented_rollout, member_costs, resolve_mode
from .distribution import InitialDistribution, quadrature_nodes, weighted_mean
from .dynamics import ControlSignal, ControlSystem, TimeGrid


def random_controls(system: ControlSystem, grid: TimeGrid, n_controls: int, amplitude: float, seed: int,
                    base: Optional[ControlSignal] = None) -> np.ndarray:
    """Node values ``(n_controls, n_steps + 1, m)`` drawn uniformly in ``[-a, a]`` (around ``base``), clipped to U."""
    rng = np.random.Generator(np.random.Philox(int(seed)))
    shape = (n_controls, grid.n_steps + 1, system.control_dim)
    u = rng.uniform(-amplitude, amplitude, size=shape) if amplitude > 0 else np.zeros(shape)
    if base is not None:
        u = u + base.values[None]
    return system.clip(u)


def sample_expected_endpoints(
    system: ControlSystem,
    dist: InitialDistribution,
    cost: CostSpec,
    grid: TimeGrid,
    n_controls: int,
    control_amplitude: float,
    seed: int,
    order: int = 5,
    base: Optional[ControlSignal] = None,
    chunk: int = 1000,
) -> np.ndarray:
    """Expected augmented endpoints ``(E cost, E q(t1))`` for random open-loop controls.

    Each row is one control applied to every quadrature member.  The cost
    coordinate is the full expected cost, evaluated in the penalty mode of
    ``cost``: the accumulated running cost plus ``I(q(t1))`` in terminal mode,
    or the absorbed running cost plus the constant ``E[I(q0)]`` in absorbed
    mode.  Either way it is directly comparable with ``SolveResult.total_cost``
    of a solve in the same mode.
    """
    if n_controls < 1:
        raise ValueError("n_controls must be at least 1")
    ensemble = quadrature_nodes(dist, order)
    cost_r = resolve_mode(cost, system)
    offset = cost_r.penalty_offset(ensemble)
    controls = random_controls(system, grid, n_controls, control_amplitude, seed, base)
    rows = []
    for start in range(0, n_controls, chunk):
        u_nodes = np.moveaxis(controls[start : start + chunk], 0, 1)
        final = augmented_rollout(system, cost_r, ensemble.points, u_nodes, grid, store=False)
        final[..., 0] = member_costs(cost_r, final)
        rows.append(weighted_mean(final, ensemble.weights, 1))
    cloud = np.concatenate(rows, axis=0)
    cloud[:, 0] += offset
    return cloud


@dataclass
class DominanceReport:
    passed: bool
    n_points: int
    violations: int
    reference_cost: float
    min_cost: float
    margin: float
    mean_margin: float


def dominance_check(result, cloud: np.ndarray, tolerance: float = 1e-6) -> DominanceReport:
    """No sampled control may beat the solver's expected cost by more than ``tolerance``."""
    ref = float(result.total_cost)
    cloud = np.asarray(cloud, dtype=float).reshape(-1, np.shape(cloud)[-1] if np.size(cloud) else 1)
    if cloud.shape[0] == 0:
        warnings.warn("empty attainable-set cloud; dominance check is vacuous", stacklevel=2)
        return DominanceReport(True, 0, 0, ref, float("nan"), float("nan"), float("nan"))
    costs = cloud[:, 0]
    violations = int(np.count_nonzero(costs < ref - tolerance))
    return DominanceReport(
        passed=violations == 0,
        n_points=int(cloud.shape[0]),
        violations=violations,
        reference_cost=ref,
        min_cost=float(costs.min()),
        margin=float(costs.min() - ref),
        mean_margin=float(costs.mean() - ref),
    )
