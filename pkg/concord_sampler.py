"""
Concord Partner Sampler

SUCG scores: φ̂(u) = φ(u) + c·√(Σ_i N(i)) / (1 + N(u)), read as sampling
weights for training partners rather than as an argmax rule. Visit counts N
persist across generations and are checkpointed with the population.
"""

from __future__ import annotations

import math

import numpy as np

from concord_errors import InvalidInputError

# Exploration constant c
DEFAULT_EXPLORATION = 0.5


class VisitCounts:
    """Per-strategy visit counts. Single writer: draws must be serialized."""

    def __init__(self, counts=None):
        self._counts = {int(k): int(v) for k, v in (counts or {}).items()}
        if any(v < 0 for v in self._counts.values()):
            raise InvalidInputError("visit counts must be non-negative")

    def register(self, strategy_id: int):
        self._counts.setdefault(int(strategy_id), 0)

    def drop(self, strategy_id: int):
        self._counts.pop(int(strategy_id), None)

    def increment(self, strategy_id: int, by: int = 1):
        if strategy_id not in self._counts:
            raise InvalidInputError(f"no visit count for strategy {strategy_id}")
        self._counts[strategy_id] += by

    def __getitem__(self, strategy_id: int) -> int:
        return self._counts[strategy_id]

    def __contains__(self, strategy_id) -> bool:
        return strategy_id in self._counts

    def total(self) -> int:
        return sum(self._counts.values())

    def as_dict(self) -> dict:
        return dict(sorted(self._counts.items()))

    def __eq__(self, other):
        return isinstance(other, VisitCounts) and self.as_dict() == other.as_dict()

    def __repr__(self):
        return f"VisitCounts({self.as_dict()})"


def _unpack(phi, ids):
    if hasattr(phi, "phi"):
        ids = ids if ids is not None else phi.ids
        phi = phi.phi
    phi = np.asarray(phi, dtype=np.float64)
    ids = tuple(range(len(phi))) if ids is None else tuple(int(i) for i in ids)
    if len(ids) != len(phi):
        raise InvalidInputError("phi and ids differ in length")
    return phi, ids


def sucg_scores(phi, counts: VisitCounts, c: float = DEFAULT_EXPLORATION, ids=None) -> np.ndarray:
    """Exploration-adjusted scores, one per entry of φ (same order)."""
    phi, ids = _unpack(phi, ids)
    if c < 0:
        raise InvalidInputError(f"exploration constant must be non-negative, got {c}")
    missing = [i for i in ids if i not in counts]
    if missing:
        raise InvalidInputError(f"missing visit counts for strategies {missing}")
    visits = np.array([counts[i] for i in ids], dtype=np.float64)
    bonus = c * math.sqrt(visits.sum()) / (1.0 + visits)
    return phi + bonus


def sample_partners(
    scores, b: int, rng: np.random.Generator, counts: VisitCounts | None = None, ids=None
) -> list:
    """b i.i.d. draws (with replacement) from scores/Σscores; returns StrategyIds.

    Each drawn id is counted in `counts` as it is drawn.
    """
    scores = np.asarray(scores, dtype=np.float64)
    ids = tuple(range(len(scores))) if ids is None else tuple(int(i) for i in ids)
    if b < 0:
        raise InvalidInputError(f"draw count must be non-negative, got {b}")
    if np.any(scores < 0) or not np.all(np.isfinite(scores)):
        raise InvalidInputError("scores must be finite and non-negative")
    total = scores.sum()
    if total <= 0:
        raise InvalidInputError("scores are all zero")
    if b == 0:
        return []

    probabilities = scores / total
    drawn = []
    for position in rng.choice(len(scores), size=b, p=probabilities):
        strategy_id = ids[int(position)]
        if counts is not None:
            counts.increment(strategy_id)
        drawn.append(strategy_id)
    return drawn
