"""
Concord Incompatibility Solvers

Turns a payoff matrix into the cooperative-incompatibility distribution φ:

    weighted PageRank σ̂  ->  unpopularity σ = normalized 1/σ̂
      SV flag: graphic Shapley value under v(C) = E_{i,j~C} σ(i)σ(j)w(i,j)
      R flag:  σ-weighted reward  φ_i = Σ_j σ(i)σ(j)w(i,j)
    ->  clamp, normalize, invert   (poorly cooperating strategies get more mass)
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from concord_errors import (
    ConvergenceError,
    DegenerateGraphError,
    InvalidInputError,
    SizeGuardError,
)
from concord_graph import GameGraph, PayoffMatrix, build_game_graph

logger = logging.getLogger("concord.solvers")

# =============================================================================
# SOLVER CONSTANTS
# =============================================================================

WPG_DAMPING = 0.85
WPG_TOL = 1e-10
WPG_MAX_ITER = 10000

# Raw solver values are clamped here before normalization
CLAMP_EPS = 1e-9

# Factorial enumeration guard for exact Shapley values
EXACT_SHAPLEY_MAX_N = 10

SOLVER_FLAGS = ("SV", "R")


def default_sample_count(n: int) -> int:
    return max(1000, 200 * n)


@dataclass(frozen=True)
class UnpopularityWeights:
    sigma_hat: np.ndarray
    sigma: np.ndarray


@dataclass(frozen=True)
class ShapleyEstimate:
    values: np.ndarray
    sample_count: int
    std_error: np.ndarray


@dataclass(frozen=True)
class IncompatibilityDistribution:
    """φ plus the intermediate solver quantities that produced it."""

    phi: np.ndarray
    weights: UnpopularityWeights | None = None
    raw: np.ndarray | None = None
    shapley: ShapleyEstimate | None = None
    ids: tuple | None = None

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=np.float64)
        if np.any(phi < 0) or abs(phi.sum() - 1.0) > 1e-9:
            raise InvalidInputError("incompatibility distribution is not a probability vector")
        object.__setattr__(self, "phi", phi)


# =============================================================================
# WEIGHTED PAGERANK
# =============================================================================


def wpg_transition(g: GameGraph) -> np.ndarray:
    """Matrix M with σ̂ = (1-d)·1 + d·M σ̂.

    M[u, v] = [w(v,u) > 0] · I_u/Σ_{p∈R(v)} I_p · O_u/Σ_{p∈R(v)} O_p, where an
    edge exists for every positive off-diagonal weight, I is weighted
    in-degree and O weighted out-degree (self-loops excluded).
    """
    w = np.array(g.weight, dtype=np.float64)
    if np.any(w < 0):
        raise InvalidInputError("weighted PageRank needs non-negative weights")
    np.fill_diagonal(w, 0.0)
    edges = w > 0  # edges[v, u]: v points to u
    in_deg = w.sum(axis=0)
    out_deg = w.sum(axis=1)

    in_norm = edges @ in_deg  # Σ_{p∈R(v)} I_p
    out_norm = edges @ out_deg
    safe_in = np.where(in_norm > 0, in_norm, 1.0)
    safe_out = np.where(out_norm > 0, out_norm, 1.0)
    # rows v, columns u, then transpose to M[u, v]
    share = edges * np.outer(1.0 / safe_in, in_deg) * np.outer(1.0 / safe_out, out_deg)
    return share.T


def weighted_pagerank(
    g: GameGraph, d: float = WPG_DAMPING, tol: float = WPG_TOL, max_iter: int = WPG_MAX_ITER
) -> np.ndarray:
    if not 0.0 < d < 1.0:
        raise InvalidInputError(f"damping must lie in (0, 1), got {d}")
    n = g.n
    if n < 1:
        raise InvalidInputError("weighted PageRank needs at least one node")
    transition = wpg_transition(g)
    if n >= 2 and not transition.any():
        raise DegenerateGraphError("all off-diagonal weights are zero")

    sigma_hat = np.ones(n)
    residual = math.inf
    for iteration in range(1, max_iter + 1):
        updated = (1.0 - d) + d * (transition @ sigma_hat)
        residual = float(np.max(np.abs(updated - sigma_hat)))
        sigma_hat = updated
        if residual <= tol:
            logger.debug("WPG converged in %d iterations (residual %.3e)", iteration, residual)
            return sigma_hat
    raise ConvergenceError(
        f"weighted PageRank did not converge in {max_iter} iterations (residual {residual:.3e})",
        residual=residual,
        iterations=max_iter,
    )


def unpopularity(sigma_hat) -> UnpopularityWeights:
    sigma_hat = np.asarray(sigma_hat, dtype=np.float64)
    if np.any(sigma_hat <= 0):
        raise InvalidInputError("WPG scores must be strictly positive")
    inverse = 1.0 / sigma_hat
    return UnpopularityWeights(sigma_hat, inverse / inverse.sum())


# =============================================================================
# GRAPHIC SHAPLEY VALUE
# =============================================================================


def _weighted_payoffs(payoff: PayoffMatrix, sigma) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.shape != (payoff.n,):
        raise InvalidInputError(f"sigma has shape {sigma.shape}, expected ({payoff.n},)")
    return np.outer(sigma, sigma) * payoff.entries


def coalition_value(coalition, sigma, payoff: PayoffMatrix) -> float:
    """v(C) = Σ_{i∈C} Σ_{j∈C} σ(i)σ(j)w(i,j) / |C|², with v(∅) = 0."""
    members = sorted(set(int(i) for i in coalition))
    if not members:
        return 0.0
    weighted = _weighted_payoffs(payoff, sigma)
    block = weighted[np.ix_(members, members)]
    return float(block.sum() / len(members) ** 2)


def shapley_from_characteristic(n: int, value: Callable[[frozenset], float]) -> np.ndarray:
    """Exact Shapley values of an arbitrary characteristic function.

    Uses the subset form Σ_S |S|!(n-|S|-1)!/n! [v(S∪{i}) - v(S)], which equals
    the average over all n! orderings.
    """
    if n > EXACT_SHAPLEY_MAX_N:
        raise SizeGuardError(f"exact Shapley limited to n <= {EXACT_SHAPLEY_MAX_N}, got {n}")
    values = np.zeros(1 << n)
    for mask in range(1, 1 << n):
        values[mask] = value(frozenset(i for i in range(n) if mask >> i & 1))

    weight = [math.factorial(s) * math.factorial(n - s - 1) / math.factorial(n) for s in range(n)]
    shapley = np.zeros(n)
    for i in range(n):
        bit = 1 << i
        terms = []
        for mask in range(1 << n):
            if mask & bit:
                continue
            terms.append(weight[bin(mask).count("1")] * (values[mask | bit] - values[mask]))
        shapley[i] = math.fsum(terms)
    return shapley


def shapley_exact(payoff: PayoffMatrix, sigma) -> np.ndarray:
    if payoff.n > EXACT_SHAPLEY_MAX_N:
        raise SizeGuardError(f"exact Shapley limited to n <= {EXACT_SHAPLEY_MAX_N}, got {payoff.n}")
    weighted = _weighted_payoffs(payoff, sigma)

    def value(coalition):
        members = sorted(coalition)
        return weighted[np.ix_(members, members)].sum() / len(members) ** 2

    return shapley_from_characteristic(payoff.n, value)


def _permutation_marginals(weighted: np.ndarray, order: np.ndarray) -> np.ndarray:
    """Marginal contribution of every player along one ordering."""
    block = weighted[np.ix_(order, order)]
    prefix_totals = np.diagonal(block.cumsum(axis=0).cumsum(axis=1))
    sizes = np.arange(1, len(order) + 1)
    prefix_values = prefix_totals / sizes**2
    marginals = np.diff(prefix_values, prepend=0.0)
    out = np.empty(len(order))
    out[order] = marginals
    return out


def shapley_monte_carlo(
    payoff: PayoffMatrix, sigma, samples: int, rng: np.random.Generator
) -> ShapleyEstimate:
    if samples < 1:
        raise InvalidInputError(f"samples must be >= 1, got {samples}")
    weighted = _weighted_payoffs(payoff, sigma)
    n = payoff.n
    marginals = np.empty((samples, n))
    for k in range(samples):
        marginals[k] = _permutation_marginals(weighted, rng.permutation(n))
    # np.mean sums pairwise, so the estimate does not depend on accumulation order drift
    values = marginals.mean(axis=0)
    if samples > 1:
        std_error = marginals.std(axis=0, ddof=1) / math.sqrt(samples)
    else:
        std_error = np.zeros(n)
    return ShapleyEstimate(values, samples, std_error)


# =============================================================================
# INCOMPATIBILITY DISTRIBUTION
# =============================================================================


def incompatibility_distribution(values) -> np.ndarray:
    """Clamp at CLAMP_EPS, normalize, then invert as (1-φ)/Σ(1-φ)."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1 or len(values) == 0:
        raise InvalidInputError("solver values must be a non-empty vector")
    if not np.all(np.isfinite(values)):
        raise InvalidInputError("solver values must be finite")
    if len(values) == 1:
        return np.ones(1)
    clamped = np.maximum(values, CLAMP_EPS)
    phi = clamped / clamped.sum()
    inverted = 1.0 - phi
    return inverted / inverted.sum()


def _unpopularity_of(payoff: PayoffMatrix, damping: float) -> UnpopularityWeights:
    graph = build_game_graph(payoff)
    # a negative payoff carries no cooperation edge
    clamped = GameGraph(np.maximum(graph.weight, 0.0), graph.ids)
    try:
        sigma_hat = weighted_pagerank(clamped, d=damping)
    except DegenerateGraphError:
        # edgeless fixed point: every node sits at the 1-d floor
        logger.warning("no pair of distinct strategies cooperates; unpopularity is uniform")
        sigma_hat = np.full(graph.n, 1.0 - damping)
    return unpopularity(sigma_hat)


def graphic_shapley_solver(
    payoff: PayoffMatrix,
    rng: np.random.Generator,
    samples: int | None = None,
    damping: float = WPG_DAMPING,
) -> IncompatibilityDistribution:
    weights = _unpopularity_of(payoff, damping)
    samples = default_sample_count(payoff.n) if samples is None else samples
    estimate = shapley_monte_carlo(payoff, weights.sigma, samples, rng)
    phi = incompatibility_distribution(estimate.values)
    return IncompatibilityDistribution(phi, weights, estimate.values, estimate, payoff.ids)


def reward_solver(payoff: PayoffMatrix, damping: float = WPG_DAMPING) -> IncompatibilityDistribution:
    weights = _unpopularity_of(payoff, damping)
    sigma = weights.sigma
    scores = sigma * (payoff.entries @ sigma)
    return IncompatibilityDistribution(
        incompatibility_distribution(scores), weights, scores, ids=payoff.ids
    )


def solve(
    payoff: PayoffMatrix,
    flag: str,
    rng: np.random.Generator,
    samples: int | None = None,
    damping: float = WPG_DAMPING,
) -> IncompatibilityDistribution:
    """Dispatch on the solver flag: "SV" graphic Shapley, "R" reward solver."""
    flag = flag.upper()
    if flag == "SV":
        return graphic_shapley_solver(payoff, rng, samples, damping)
    if flag == "R":
        return reward_solver(payoff, damping)
    raise InvalidInputError(f"unknown solver flag {flag!r}, expected one of {SOLVER_FLAGS}")
