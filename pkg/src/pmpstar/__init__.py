"""Open-loop optimal control under random initial conditions via the expected-Hamiltonian maximum principle."""

__version__ = "0.1.0"

from .cost import CostSpec, PenaltyMode, TerminalPenalty, absorb_penalty, augment, expected_cost
from .distribution import Dirac, Ensemble, Gaussian, WeightedEnsemble, expectation, quadrature_nodes, sample
from .dynamics import (
    ControlSignal,
    ControlSystem,
    TimeGrid,
    check_jacobians,
    integrate_costate_backward,
    integrate_forward,
)
from .errors import (
    AbnormalStructureError,
    BudgetExceededError,
    ContractError,
    IntegrationDivergedError,
    PMPStarError,
)
from .indirect import SolveResult, SolverConfig, solve_pmp, solve_pmp_star, verify_extremal
from .direct import grid_search_linear_family, solve_direct
from .attainable import dominance_check, sample_expected_endpoints
from .scenarios import Scenario, cheapest_stop, get_scenario

__all__ = [
    "AbnormalStructureError", "BudgetExceededError", "ContractError", "ControlSignal", "ControlSystem",
    "CostSpec", "Dirac", "Ensemble", "Gaussian", "IntegrationDivergedError", "PMPStarError", "PenaltyMode",
    "Scenario", "SolveResult", "SolverConfig", "TerminalPenalty", "TimeGrid", "WeightedEnsemble",
    "absorb_penalty", "augment", "check_jacobians", "cheapest_stop", "dominance_check", "expectation",
    "expected_cost", "get_scenario", "grid_search_linear_family", "integrate_costate_backward",
    "integrate_forward", "quadrature_nodes", "sample", "sample_expected_endpoints", "solve_direct",
    "solve_pmp", "solve_pmp_star", "verify_extremal",
]
