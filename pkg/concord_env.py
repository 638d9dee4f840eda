"""
Concord Convention Games

Desk-scale two-player common-payoff stage games with exact pairwise payoff
evaluation, tabular stochastic strategies, the creation-ordered population,
and incremental payoff-matrix completion.

A convention game has a high payoff on every matched action (a, a) and a low
off-convention payoff elsewhere; strategies that commit to one convention
cannot coordinate with partners committed to another.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np

from concord_errors import InvalidInputError
from concord_graph import PayoffMatrix

logger = logging.getLogger("concord.env")

# =============================================================================
# ENVIRONMENT CONSTANTS
# =============================================================================

ONE_SHOT = "one-shot"
TWO_STAGE = "two-stage"
GAME_KINDS = (ONE_SHOT, TWO_STAGE)

# How the initial population N₀ is drawn
INITIAL_KINDS = ("uniform", "random", "memoryless")

# Simplex tolerance for every probability vector
SIMPLEX_TOL = 1e-9

# Rollouts per role when payoffs are noisy
DEFAULT_EPISODES = 64

# Digits kept when hashing strategy parameters
HASH_DIGITS = 12


@dataclass(frozen=True)
class StageGame:
    kind: str
    utility: np.ndarray
    noise_std: float = 0.0
    episodes: int = DEFAULT_EPISODES

    def __post_init__(self):
        if self.kind not in GAME_KINDS:
            raise InvalidInputError(f"unknown game kind {self.kind!r}, expected one of {GAME_KINDS}")
        utility = np.array(self.utility, dtype=np.float64)
        if utility.ndim != 2 or utility.shape[0] != utility.shape[1] or utility.shape[0] < 1:
            raise InvalidInputError(f"utility must be a non-empty square matrix, got {utility.shape}")
        if not np.all(np.isfinite(utility)):
            raise InvalidInputError("utility has non-finite entries")
        if self.noise_std < 0:
            raise InvalidInputError("noise_std must be non-negative")
        if self.episodes < 1:
            raise InvalidInputError("episodes must be positive")
        utility.setflags(write=False)
        object.__setattr__(self, "utility", utility)

    @property
    def action_count(self) -> int:
        return self.utility.shape[0]

    @property
    def rounds(self) -> int:
        return 2 if self.kind == TWO_STAGE else 1

    def noiseless(self) -> StageGame:
        if self.noise_std == 0:
            return self
        return StageGame(self.kind, self.utility, 0.0, self.episodes)


def make_convention_game(
    conventions, off_payoff: float = 0.0, kind: str = ONE_SHOT, noise_std: float = 0.0,
    episodes: int = DEFAULT_EPISODES,
) -> StageGame:
    conventions = [float(c) for c in conventions]
    if not conventions:
        raise InvalidInputError("a convention game needs at least one convention")
    if any(c <= 0 for c in conventions):
        raise InvalidInputError("convention payoffs must be positive")
    if off_payoff >= min(conventions):
        raise InvalidInputError(
            f"off_payoff {off_payoff} must be below every convention payoff (min {min(conventions)})"
        )
    size = len(conventions)
    utility = np.full((size, size), float(off_payoff))
    np.fill_diagonal(utility, conventions)
    return StageGame(kind, utility, noise_std, episodes)


# =============================================================================
# STRATEGIES
# =============================================================================


def _check_simplex(vector, what):
    if np.any(vector < -SIMPLEX_TOL) or np.any(np.abs(vector.sum(axis=-1) - 1.0) > SIMPLEX_TOL):
        raise InvalidInputError(f"{what} is not on the probability simplex")


@dataclass(frozen=True)
class Strategy:
    """Tabular policy: first-round mixed action and, for two-stage games, one
    response row per observed partner first-round action."""

    id: int
    first_round: np.ndarray
    response: np.ndarray | None = None
    birth_generation: int = 0
    content_hash: str = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        first = np.array(self.first_round, dtype=np.float64)
        if first.ndim != 1 or len(first) < 1:
            raise InvalidInputError("first_round must be a non-empty vector")
        _check_simplex(first, "first_round")
        first.setflags(write=False)
        object.__setattr__(self, "first_round", first)
        if self.response is not None:
            response = np.array(self.response, dtype=np.float64)
            if response.shape != (len(first), len(first)):
                raise InvalidInputError(f"response must be {len(first)}x{len(first)}, got {response.shape}")
            _check_simplex(response, "response row")
            response.setflags(write=False)
            object.__setattr__(self, "response", response)
        object.__setattr__(self, "content_hash", parameter_hash(first, self.response))

    @property
    def action_count(self) -> int:
        return len(self.first_round)

    def parameters(self) -> np.ndarray:
        """Flat parameter vector: first round, then response rows."""
        if self.response is None:
            return self.first_round.copy()
        return np.concatenate([self.first_round, self.response.ravel()])

    def with_parameters(self, params, **changes) -> Strategy:
        params = np.asarray(params, dtype=np.float64)
        size = self.action_count
        response = None if self.response is None else params[size:].reshape(size, size)
        return Strategy(
            changes.get("id", self.id),
            params[:size],
            response,
            changes.get("birth_generation", self.birth_generation),
        )


def parameter_hash(first_round, response=None) -> str:
    """Content hash over the parameters' 12-digit decimal serialization."""
    values = list(first_round) + ([] if response is None else list(np.ravel(response)))
    text = ",".join(f"{round(float(v), HASH_DIGITS):.{HASH_DIGITS}f}" for v in values)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def _response_table(game: StageGame, rows):
    return rows if game.kind == TWO_STAGE else None


def uniform_strategy(game: StageGame, strategy_id: int = 0, birth_generation: int = 0) -> Strategy:
    size = game.action_count
    rows = np.full((size, size), 1.0 / size)
    return Strategy(strategy_id, np.full(size, 1.0 / size), _response_table(game, rows), birth_generation)


def random_strategy(
    game: StageGame, rng: np.random.Generator, strategy_id: int = 0, birth_generation: int = 0,
    concentration: float = 1.0,
) -> Strategy:
    size = game.action_count
    alpha = np.full(size, concentration)
    first = rng.dirichlet(alpha)
    rows = rng.dirichlet(alpha, size=size) if game.kind == TWO_STAGE else None
    return Strategy(strategy_id, first, rows, birth_generation)


def memoryless_strategy(
    game: StageGame, rng: np.random.Generator, strategy_id: int = 0, birth_generation: int = 0,
    concentration: float = 1.0,
) -> Strategy:
    """Random opening that ignores the partner: every response row repeats it.

    A small concentration gives near-pure openers, i.e. noisy convention holders.
    """
    if concentration <= 0:
        raise InvalidInputError("concentration must be positive")
    size = game.action_count
    first = rng.dirichlet(np.full(size, concentration))
    return Strategy(strategy_id, first, _response_table(game, np.tile(first, (size, 1))), birth_generation)


def stubborn_strategy(game: StageGame, action: int, strategy_id: int = 0) -> Strategy:
    """Pure-convention probe: plays `action` in every round whatever it observes."""
    size = game.action_count
    if not 0 <= action < size:
        raise InvalidInputError(f"action {action} outside 0..{size - 1}")
    pure = np.zeros(size)
    pure[action] = 1.0
    return Strategy(strategy_id, pure, _response_table(game, np.tile(pure, (size, 1))))


def adaptive_strategy(game: StageGame, strategy_id: int = 0) -> Strategy:
    """Uniform first round, then copy the partner's observed first-round action."""
    size = game.action_count
    return Strategy(strategy_id, np.full(size, 1.0 / size), _response_table(game, np.eye(size)))


def check_compatible(strategy: Strategy, game: StageGame):
    if strategy.action_count != game.action_count:
        raise InvalidInputError(
            f"strategy {strategy.id} has {strategy.action_count} actions, game has {game.action_count}"
        )
    if game.kind == TWO_STAGE and strategy.response is None:
        raise InvalidInputError(f"strategy {strategy.id} has no response table for a two-stage game")
    if game.kind == ONE_SHOT and strategy.response is not None:
        raise InvalidInputError(f"strategy {strategy.id} carries a response table in a one-shot game")


# =============================================================================
# PAIR EVALUATION
# =============================================================================


def expected_play(x_a, resp_a, x_b, resp_b, utility) -> float:
    """Exact expected common payoff with player a as row player.

    Round two: a plays resp_a[partner's first action], b plays resp_b[a's
    first action]; the einsum enumerates every joint outcome.
    """
    total = x_a @ utility @ x_b
    if resp_a is not None:
        total += np.einsum("a,b,bk,kl,al->", x_a, x_b, resp_a, utility, resp_b)
    return float(total)


def _sample_rows(table, rows, rng):
    cumulative = np.cumsum(table[rows], axis=1)
    draws = rng.random(len(rows))[:, None]
    return np.minimum((cumulative < draws).sum(axis=1), table.shape[1] - 1)


def _rollout_mean(s_a: Strategy, s_b: Strategy, game: StageGame, rng: np.random.Generator) -> float:
    episodes = game.episodes
    utility = game.utility
    first_a = _sample_rows(s_a.first_round[None, :], np.zeros(episodes, dtype=int), rng)
    first_b = _sample_rows(s_b.first_round[None, :], np.zeros(episodes, dtype=int), rng)
    rewards = utility[first_a, first_b]
    if game.kind == TWO_STAGE:
        second_a = _sample_rows(s_a.response, first_b, rng)
        second_b = _sample_rows(s_b.response, first_a, rng)
        rewards = rewards + utility[second_a, second_b]
    rewards = rewards + rng.normal(0.0, game.noise_std, size=episodes)
    return float(rewards.mean())


def pair_seed(base_seed: int, s_i: Strategy, s_j: Strategy) -> int:
    """Evaluation seed derived from content, independent of call order."""
    digest = hashlib.sha256(
        f"{base_seed}:{':'.join(sorted((s_i.content_hash, s_j.content_hash)))}".encode("utf-8")
    ).hexdigest()
    return int(digest[:16], 16)


def evaluate_pair(s_i: Strategy, s_j: Strategy, game: StageGame, seed: int = 0) -> float:
    """Role-averaged payoff w(i, j): mean of playing as row player and as column player."""
    check_compatible(s_i, game)
    check_compatible(s_j, game)
    utility = game.utility
    if game.noise_std == 0:
        as_row = expected_play(s_i.first_round, s_i.response, s_j.first_round, s_j.response, utility)
        as_col = expected_play(s_j.first_round, s_j.response, s_i.first_round, s_i.response, utility)
        return (as_row + as_col) / 2.0

    rng = np.random.default_rng(pair_seed(seed, s_i, s_j))
    as_row = _rollout_mean(s_i, s_j, game, rng)
    as_col = _rollout_mean(s_j, s_i, game, rng)
    return (as_row + as_col) / 2.0


# =============================================================================
# POPULATION AND PAYOFF COMPLETION
# =============================================================================


class Population:
    """Creation-ordered strategy set. StrategyIds are never reused."""

    def __init__(self, strategies=(), next_id: int | None = None):
        self._strategies = {}
        for strategy in strategies:
            self._insert(strategy)
        floor = max(self._strategies, default=-1) + 1
        self.next_id = floor if next_id is None else max(int(next_id), floor)

    def _insert(self, strategy: Strategy):
        if strategy.id in self._strategies:
            raise InvalidInputError(f"duplicate strategy id {strategy.id}")
        self._strategies[strategy.id] = strategy

    def new_id(self) -> int:
        strategy_id = self.next_id
        self.next_id += 1
        return strategy_id

    def add(self, strategy: Strategy):
        self._insert(strategy)
        self.next_id = max(self.next_id, strategy.id + 1)

    def remove(self, strategy_id: int) -> Strategy:
        return self._strategies.pop(strategy_id)

    @property
    def ids(self) -> tuple:
        return tuple(sorted(self._strategies))

    def strategies(self) -> list:
        return [self._strategies[i] for i in self.ids]

    def latest(self) -> Strategy:
        return self._strategies[max(self._strategies)]

    def oldest(self, window: int) -> list:
        """The `window` oldest strategies by birth generation, then id."""
        ordered = sorted(self._strategies.values(), key=lambda s: (s.birth_generation, s.id))
        return ordered[:window]

    def __getitem__(self, strategy_id: int) -> Strategy:
        return self._strategies[strategy_id]

    def __contains__(self, strategy_id) -> bool:
        return strategy_id in self._strategies

    def __len__(self):
        return len(self._strategies)

    def __iter__(self):
        return iter(self.strategies())


class PairCache:
    """Payoffs keyed by id pair; a hit requires unchanged parameter hashes."""

    def __init__(self):
        self._entries = {}
        self.evaluations = 0

    @staticmethod
    def _key(s_i: Strategy, s_j: Strategy):
        return (s_i.id, s_j.id) if s_i.id <= s_j.id else (s_j.id, s_i.id)

    def lookup(self, s_i: Strategy, s_j: Strategy):
        entry = self._entries.get(self._key(s_i, s_j))
        if entry is None:
            return None
        hashes, value = entry
        if hashes != frozenset((s_i.content_hash, s_j.content_hash)):
            return None
        return value

    def store(self, s_i: Strategy, s_j: Strategy, value: float) -> float:
        # insert-if-absent for unchanged parameters; writers agree on the value
        key = self._key(s_i, s_j)
        hashes = frozenset((s_i.content_hash, s_j.content_hash))
        entry = self._entries.get(key)
        if entry is None or entry[0] != hashes:
            entry = self._entries[key] = (hashes, value)
        return entry[1]

    def evaluate(self, s_i: Strategy, s_j: Strategy, game: StageGame, seed: int = 0) -> float:
        cached = self.lookup(s_i, s_j)
        if cached is not None:
            return cached
        first, second = (s_i, s_j) if s_i.id <= s_j.id else (s_j, s_i)
        self.evaluations += 1
        return self.store(s_i, s_j, evaluate_pair(first, second, game, seed))

    def drop(self, strategy_id: int):
        for key in [k for k in self._entries if strategy_id in k]:
            del self._entries[key]

    def __len__(self):
        return len(self._entries)


def complete_payoff_matrix(
    pop: Population, game: StageGame, cache: PairCache | None = None, seed: int = 0
) -> PayoffMatrix:
    """Fill w(i, j) for every pair, self-pairs included; only uncached pairs are evaluated."""
    cache = PairCache() if cache is None else cache
    strategies = pop.strategies()
    size = len(strategies)
    entries = np.zeros((size, size))
    before = cache.evaluations
    for i, s_i in enumerate(strategies):
        for j in range(i, size):
            value = cache.evaluate(s_i, strategies[j], game, seed)
            entries[i, j] = entries[j, i] = value
    logger.debug("payoff completion: %d new evaluations for n=%d", cache.evaluations - before, size)
    return PayoffMatrix(entries, symmetric=True, ids=pop.ids)
