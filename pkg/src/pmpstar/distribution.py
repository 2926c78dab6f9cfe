"""Random initial conditions and their finite weighted ensembles.

Expectations are computed over a :class:`WeightedEnsemble`, produced either by
tensor-product Gauss-Hermite quadrature or by seeded Monte Carlo sampling.
Sampling uses numpy's Philox4x64 counter-based generator, so an ensemble is a
pure function of ``(distribution, n, seed)`` on every platform.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import BudgetExceededError, ContractError

MAX_QUADRATURE_NODES = 10**6
MAX_ORDER = 10


@dataclass(frozen=True)
class Dirac:
    point: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "point", np.atleast_1d(np.asarray(self.point, dtype=float)))

    @property
    def dim(self) -> int:
        return self.point.shape[0]


@dataclass(frozen=True)
class Gaussian:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if cov.shape != (mean.shape[0], mean.shape[0]):
            raise ContractError(f"covariance shape {cov.shape} does not match mean {mean.shape}")
        if np.max(np.abs(cov - cov.T), initial=0.0) > 1e-12:
            raise ContractError("covariance is not symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        # factorization attempt doubles as the PSD check
        object.__setattr__(self, "_sqrt", _psd_sqrt(cov))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def sqrt_covariance(self) -> np.ndarray:
        return self._sqrt


@dataclass(frozen=True)
class Ensemble:
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (pts.shape[0],):
            raise ContractError("need exactly one weight per ensemble point")
        if np.any(w < 0):
            raise ContractError("ensemble weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ContractError(f"ensemble weights sum to {w.sum()!r}, not 1")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def dim(self) -> int:
        return self.points.shape[1]


InitialDistribution = Union[Dirac, Gaussian, Ensemble]


def _psd_sqrt(cov: np.ndarray) -> np.ndarray:
    evals, evecs = np.linalg.eigh(cov)
    floor = -1e-12 * max(1.0, float(np.max(np.abs(evals))))
    if evals.min() < floor:
        raise ContractError(f"covariance is not positive semidefinite (min eigenvalue {evals.min():.3g})")
    return (evecs * np.sqrt(np.clip(evals, 0.0, None))) @ evecs.T


@dataclass(frozen=True)
class WeightedEnsemble:
    """Points and positive weights summing to one; ``provenance`` records how they were made."""

    points: np.ndarray
    weights: np.ndarray
    provenance: str = ""

    def __post_init__(self):
        if self.points.ndim != 2 or self.weights.shape != (self.points.shape[0],):
            raise ContractError("ensemble points must be (N, n) with N weights")
        if np.any(self.weights <= 0):
            raise ContractError("ensemble weights must be positive")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise ContractError("ensemble weights must sum to 1")

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    def covariance(self) -> np.ndarray:
        d = self.points - self.mean()
        return (self.weights[:, None] * d).T @ d


def _drop_zero_weights(points, weights, provenance):
    keep = weights > 0
    w = weights[keep]
    return WeightedEnsemble(points[keep], w / w.sum(), provenance)


def quadrature_nodes(dist: InitialDistribution, order: int) -> WeightedEnsemble:
    """Deterministic quadrature ensemble for ``dist``.

    Gaussians get tensor-product Gauss-Hermite nodes of ``order`` points per
    dimension mapped through the symmetric square root of the covariance;
    a Dirac gives its point; an explicit ensemble is returned as-is.
    """
    if isinstance(dist, Dirac):
        return WeightedEnsemble(dist.point[None, :].copy(), np.ones(1), "dirac")
    if isinstance(dist, Ensemble):
        return _drop_zero_weights(dist.points.copy(), dist.weights.copy(), "ensemble")
    if not isinstance(dist, Gaussian):
        raise ContractError(f"unsupported distribution {type(dist).__name__}")
    if int(order) != order or not 1 <= order <= MAX_ORDER:
        raise ContractError(f"quadrature order must be an integer in [1, {MAX_ORDER}], got {order}")
    n = dist.dim
    if order**n > MAX_QUADRATURE_NODES:
        raise BudgetExceededError(f"{order}^{n} quadrature nodes exceed the budget of {MAX_QUADRATURE_NODES}")
    z1, w1 = np.polynomial.hermite_e.hermegauss(int(order))
    # enforce the rule's exact symmetry so odd moments vanish to rounding
    z1 = 0.5 * (z1 - z1[::-1])
    w1 = 0.5 * (w1 + w1[::-1])
    # list nodes as (+z, -z) pairs, outermost first, so that an index-order
    # sum of an odd integrand cancels pair by pair
    half = int(order) // 2
    idx = [i for j in range(half) for i in (int(order) - 1 - j, j)]
    if int(order) % 2:
        idx.append(half)
    z1, w1 = z1[idx], w1[idx]
    w1 = w1 / w1.sum()
    z = np.array(list(itertools.product(z1, repeat=n)), dtype=float)
    w = np.array([np.prod(c) for c in itertools.product(w1, repeat=n)], dtype=float)
    w = w / w.sum()
    points = dist.mean + z @ dist.sqrt_covariance.T
    return WeightedEnsemble(points, w, f"gauss-hermite order {int(order)}")


def sample(dist: InitialDistribution, n: int, seed: int) -> WeightedEnsemble:
    """``n`` i.i.d. draws with uniform weights, reproducible from ``seed`` (Philox4x64)."""
    if int(n) != n or n < 1:
        raise ContractError(f"sample size must be a positive integer, got {n}")
    n = int(n)
    rng = np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))
    if isinstance(dist, Dirac):
        points = np.tile(dist.point, (n, 1))
    elif isinstance(dist, Gaussian):
        z = rng.standard_normal((n, dist.dim))
        points = dist.mean + z @ dist.sqrt_covariance.T
    elif isinstance(dist, Ensemble):
        idx = rng.choice(dist.points.shape[0], size=n, p=dist.weights)
        points = dist.points[idx]
    else:
        raise ContractError(f"unsupported distribution {type(dist).__name__}")
    return WeightedEnsemble(points, np.full(n, 1.0 / n), f"monte-carlo n={n} seed={int(seed)}")


def expectation(values: Sequence[float], ensemble: WeightedEnsemble) -> float:
    """Weighted sum accumulated in index order."""
    v = np.asarray(values, dtype=float)
    if v.shape[:1] != (ensemble.size,):
        raise ContractError(f"got {v.shape[0] if v.ndim else 0} values for {ensemble.size} ensemble points")
    total = 0.0
    for wi, vi in zip(ensemble.weights, v):
        total += wi * vi
    return float(total)


def weighted_mean(values: np.ndarray, weights: np.ndarray, axis: int) -> np.ndarray:
    """Fixed-order weighted reduction of array values along ``axis`` (ensemble axis)."""
    values = np.moveaxis(np.asarray(values, dtype=float), axis, 0)
    total = np.zeros(values.shape[1:])
    for wi, vi in zip(weights, values):
        total = total + wi * vi
    return total
