"""Exception types raised by the solver toolkit."""

from __future__ import annotations


class PMPStarError(Exception):
    """Base class for all toolkit errors."""


class ContractError(PMPStarError, ValueError):
    """Inputs violate an operation's preconditions (shapes, grids, missing data)."""


class IntegrationDivergedError(PMPStarError, RuntimeError):
    """A non-finite value appeared while integrating states or costates."""

    def __init__(self, step: int, what: str = "state"):
        self.step = step
        self.what = what
        super().__init__(f"non-finite {what} encountered at step {step}")


class BudgetExceededError(PMPStarError, RuntimeError):
    """A tensor-product quadrature would exceed the node budget."""


class AbnormalStructureError(PMPStarError, RuntimeError):
    """The expected Hamiltonian is unbounded in the control at some node."""

    def __init__(self, node: int, message: str = ""):
        self.node = node
        super().__init__(message or f"expected Hamiltonian unbounded in u at node {node}")
