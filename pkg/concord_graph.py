"""
Concord Game Graphs

Graphic-form games over a strategy population: the complete weighted directed
graph of pairwise payoffs, the preference graph that keeps each node's best
out-edge, in-degree preference centrality, and empirical gamescape mixtures.

Nodes are addressed by position 0..n-1 inside a snapshot; `ids` carries the
StrategyId of each position (creation order, never reused).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from concord_errors import InvalidInputError, UndefinedPreferenceError

# Simplex tolerance for mixture weights
SIMPLEX_TOL = 1e-9

# Relative tolerance under which two out-edge weights count as tied
PREFERENCE_TIE_TOL = 1e-9


def _default_ids(n):
    return tuple(range(n))


@dataclass(frozen=True)
class PayoffMatrix:
    """n×n expected common payoffs; entries[i, j] = w(i, j)."""

    entries: np.ndarray
    symmetric: bool = False
    ids: tuple = None

    def __post_init__(self):
        entries = np.array(self.entries, dtype=np.float64)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise InvalidInputError(f"payoff matrix must be square, got shape {entries.shape}")
        if not np.all(np.isfinite(entries)):
            raise InvalidInputError("payoff matrix has non-finite entries")
        if self.symmetric and not np.array_equal(entries, entries.T):
            raise InvalidInputError("payoff matrix flagged symmetric but entry(i,j) != entry(j,i)")
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)
        ids = _default_ids(len(entries)) if self.ids is None else tuple(int(i) for i in self.ids)
        if len(ids) != len(entries) or len(set(ids)) != len(ids):
            raise InvalidInputError("payoff ids must be unique, one per row")
        object.__setattr__(self, "ids", ids)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def restrict(self, positions) -> PayoffMatrix:
        """Submatrix over the given positions, in the given order."""
        positions = list(positions)
        sub = self.entries[np.ix_(positions, positions)]
        return PayoffMatrix(sub, self.symmetric, tuple(self.ids[p] for p in positions))


@dataclass(frozen=True)
class GameGraph:
    """Complete directed graph; weight[i, j] = w(i, j), self-loops included."""

    weight: np.ndarray
    ids: tuple

    @property
    def n(self) -> int:
        return self.weight.shape[0]


@dataclass(frozen=True)
class PreferenceGraph:
    """One argmax out-edge per node, self-loop excluded. out_edge holds positions."""

    out_edge: np.ndarray
    ids: tuple

    @property
    def n(self) -> int:
        return len(self.out_edge)

    def as_mapping(self) -> dict:
        return {self.ids[i]: self.ids[int(j)] for i, j in enumerate(self.out_edge)}


@dataclass(frozen=True)
class CentralityReport:
    eta: np.ndarray
    in_degree: np.ndarray
    ids: tuple = field(default=None)

    def rank_of(self, position: int) -> int:
        """Ascending-η rank of one node; η ties resolve in that node's favor.

        A node nobody prefers (in-degree 0) ranks last, n, whatever the
        other nodes' η.
        """
        if self.in_degree[position] == 0:
            return len(self.eta)
        return 1 + int(np.sum(self.eta < self.eta[position]))


def build_game_graph(payoff: PayoffMatrix) -> GameGraph:
    if payoff.n < 1:
        raise InvalidInputError("game graph needs at least one strategy")
    return GameGraph(payoff.entries, payoff.ids)


def build_preference_graph(g: GameGraph) -> PreferenceGraph:
    """Keep, for every node, the out-edge of maximum weight to another node.

    Weights within PREFERENCE_TIE_TOL (relative) of the maximum are tied, and
    ties go to the smallest position, which is the oldest strategy in a
    creation-ordered snapshot.
    """
    n = g.n
    if n < 2:
        raise UndefinedPreferenceError(f"preference graph needs n >= 2, got {n}")
    masked = np.array(g.weight, dtype=np.float64)
    np.fill_diagonal(masked, -np.inf)
    best = masked.max(axis=1, keepdims=True)
    tied = masked >= best - PREFERENCE_TIE_TOL * np.maximum(1.0, np.abs(best))
    out_edge = np.argmax(tied, axis=1)
    out_edge.setflags(write=False)
    return PreferenceGraph(out_edge, g.ids)


def preference_centrality(p: PreferenceGraph) -> CentralityReport:
    """η(i) = 1 - in_degree(i)/(n-1)."""
    n = p.n
    if n < 2:
        raise UndefinedPreferenceError(f"centrality needs n >= 2, got {n}")
    in_degree = np.bincount(p.out_edge, minlength=n)
    eta = 1.0 - in_degree / (n - 1)
    return CentralityReport(eta, in_degree, p.ids)


def preference_report(payoff: PayoffMatrix) -> tuple[PreferenceGraph, CentralityReport]:
    pref = build_preference_graph(build_game_graph(payoff))
    return pref, preference_centrality(pref)


def sub_preference_graphs(payoffs: PayoffMatrix, order) -> list:
    """Preference graph and centrality of every creation prefix of length 2..n.

    `order` lists StrategyIds in creation order and must be a permutation of
    the snapshot's ids.
    """
    order = [int(i) for i in order]
    if sorted(order) != sorted(payoffs.ids):
        raise InvalidInputError("order is not a permutation of the snapshot ids")
    if payoffs.n < 2:
        raise UndefinedPreferenceError(f"sub-preference graphs need n >= 2, got {payoffs.n}")
    position = {sid: k for k, sid in enumerate(payoffs.ids)}
    positions = [position[sid] for sid in order]

    graphs = []
    for m in range(2, payoffs.n + 1):
        graphs.append(preference_report(payoffs.restrict(positions[:m])))
    return graphs


def gamescape_mixture(payoff: PayoffMatrix, weights) -> np.ndarray:
    """Convex mixture Σ_i weights(i)·row_i of the payoff matrix."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (payoff.n,):
        raise InvalidInputError(f"expected {payoff.n} weights, got shape {weights.shape}")
    if np.any(weights < -SIMPLEX_TOL) or abs(weights.sum() - 1.0) > SIMPLEX_TOL:
        raise InvalidInputError("mixture weights are not on the probability simplex")
    return weights @ payoff.entries
