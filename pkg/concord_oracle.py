"""
Concord Best-Response Oracle

Approximates the best-preferred strategy against the individual/cooperative
training mixture:

    J(s) = (b·Σ_p φ(p)·w(s, p) / Σ_p φ(p) + a·α·w(s, s)) / (a + b)

over the SUCG draws p of one ascent round, so the a:b ratio is the share of
each batch spent on self-play and on cooperative partners.
Tabular strategies ascend J by projected gradient (analytic for one-shot
games, central finite differences for two-stage games). A candidate is
accepted when its ascending-η rank on the prospective preference graph is
within the top k and somebody prefers it; otherwise training restarts from a
perturbed start.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from concord_env import (
    ONE_SHOT,
    PairCache,
    Population,
    StageGame,
    Strategy,
    check_compatible,
    complete_payoff_matrix,
)
from concord_errors import InvalidInputError, TrainingError
from concord_graph import PayoffMatrix, preference_report
from concord_sampler import DEFAULT_EXPLORATION, VisitCounts, sample_partners, sucg_scores

logger = logging.getLogger("concord.oracle")

# Central-difference step for two-stage gradients
FD_STEP = 1e-5

# Uniform perturbation applied to s_init before each restart
RESTART_NOISE = 0.1


@dataclass(frozen=True)
class OracleConfig:
    alpha: float = 1.0
    ratio_a: int = 1
    ratio_b: int = 3
    inner_updates: int = 10
    steps_per_update: int = 20
    step_size: float = 0.05
    k: int = 3
    max_restarts: int = 3
    exploration: float = DEFAULT_EXPLORATION
    exact_best_response: bool = False

    def __post_init__(self):
        if self.alpha < 0:
            raise InvalidInputError("alpha must be non-negative")
        if self.ratio_a < 0 or self.ratio_b < 0 or self.ratio_a + self.ratio_b < 1:
            raise InvalidInputError(f"invalid sampling ratio {self.ratio_a}:{self.ratio_b}")
        if self.inner_updates < 1 or self.steps_per_update < 1:
            raise InvalidInputError("inner_updates and steps_per_update must be positive")
        if self.step_size < 0:
            raise InvalidInputError("step_size must be non-negative")
        if self.k < 1:
            raise InvalidInputError("k must be >= 1")
        if self.max_restarts < 0:
            raise InvalidInputError("max_restarts must be non-negative")

    @property
    def self_weight(self) -> float:
        """Coefficient of w(s, s) in the training objective."""
        return self.alpha * self.ratio_a / (self.ratio_a + self.ratio_b)

    @property
    def cooperative_share(self) -> float:
        """Share of the training objective carried by the φ-weighted partners."""
        return self.ratio_b / (self.ratio_a + self.ratio_b)


@dataclass(frozen=True)
class TrainReport:
    final_strategy: Strategy
    eta: float
    rank: int
    rank_satisfied: bool
    objective_trace: list = field(default_factory=list)
    attempts: int = 1
    payoff_row: np.ndarray | None = None


# =============================================================================
# SIMPLEX PROJECTION
# =============================================================================


def project_simplex(x) -> np.ndarray:
    """Euclidean projection of a vector onto the probability simplex."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if np.all(x >= 0) and abs(x.sum() - 1.0) < 1e-12:
        return x.copy()
    n = len(x)
    u = np.sort(x)[::-1]
    cssv = np.cumsum(u) - 1.0
    rho = np.nonzero(u * np.arange(1, n + 1) > cssv)[0][-1]
    theta = cssv[rho] / (rho + 1)
    return np.maximum(x - theta, 0.0)


def project_parameters(params, action_count: int) -> np.ndarray:
    """Project every probability block (first round, each response row)."""
    params = np.asarray(params, dtype=np.float64)
    blocks = params.reshape(-1, action_count)
    return np.concatenate([project_simplex(block) for block in blocks])


# =============================================================================
# OBJECTIVE
# =============================================================================


def _split(params, size):
    params = np.asarray(params, dtype=np.float64)
    first = params[..., :size]
    if params.shape[-1] == size:
        return first, None
    return first, params[..., size:].reshape(params.shape[:-1] + (size, size))


def batch_objective(batch, partner_params, partner_weights, self_weight, game: StageGame):
    """J for a batch of candidate parameter vectors (rows of `batch`)."""
    size = game.action_count
    utility = game.utility
    sym = (utility + utility.T) / 2.0
    xs, rs = _split(np.atleast_2d(batch), size)
    total = np.zeros(xs.shape[0])

    for params, weight in zip(partner_params, partner_weights):
        xp, rp = _split(params, size)
        value = np.einsum("za,ab,b->z", xs, sym, xp)
        if rs is not None:
            as_row = np.einsum("za,b,zbk,kl,al->z", xs, xp, rs, utility, rp)
            as_col = np.einsum("a,zb,bk,kl,zal->z", xp, xs, rp, utility, rs)
            value = value + (as_row + as_col) / 2.0
        total += weight * value

    if self_weight:
        value = np.einsum("za,ab,zb->z", xs, utility, xs)
        if rs is not None:
            value = value + np.einsum("za,zb,zbk,kl,zal->z", xs, xs, rs, utility, rs)
        total += self_weight * value
    return total


def normalized_weights(weights, share: float = 1.0) -> np.ndarray:
    """φ weights of the drawn partners rescaled to sum to `share`."""
    weights = np.asarray(weights, dtype=np.float64)
    total = weights.sum()
    if total <= 0:
        return np.zeros_like(weights)
    return share * weights / total


def objective(s: Strategy, partners, alpha: float, game: StageGame, pop: Population, self_pairings: int = 1) -> float:
    """Sampled objective Σ φ(p)·w(s,p) / Σ φ(p) + α·self_pairings·w(s,s).

    `partners` is a sequence of (StrategyId, φ weight) pairs, one per draw;
    the φ-weighted mean estimates E_{p∼φ} w(s,p). Payoffs are noiseless.
    """
    check_compatible(s, game)
    partner_params = [pop[pid].parameters() for pid, _ in partners]
    weights = normalized_weights([float(w) for _, w in partners])
    value = batch_objective(s.parameters(), partner_params, weights, alpha * self_pairings, game.noiseless())
    return float(value[0])


def objective_gradient(params, partner_params, partner_weights, self_weight, game: StageGame) -> np.ndarray:
    """Analytic gradient of J for one-shot games: Σ_p weight(p)·Ū x_p + 2·self_weight·Ū x."""
    if game.kind != ONE_SHOT:
        raise InvalidInputError("analytic gradient is only defined for one-shot games")
    sym = (game.utility + game.utility.T) / 2.0
    x = np.asarray(params, dtype=np.float64)
    mixture = np.zeros_like(x)
    for xp, weight in zip(partner_params, partner_weights):
        mixture += weight * np.asarray(xp, dtype=np.float64)
    return sym @ mixture + 2.0 * self_weight * (sym @ x)


def finite_difference_gradient(fn, params, h: float = FD_STEP, project=None) -> np.ndarray:
    """Central differences of a batched objective; perturbed points may be re-projected."""
    params = np.asarray(params, dtype=np.float64)
    eye = np.eye(len(params)) * h
    plus = params + eye
    minus = params - eye
    if project is not None:
        plus = np.array([project(p) for p in plus])
        minus = np.array([project(p) for p in minus])
    return (fn(plus) - fn(minus)) / (2.0 * h)


def best_response_step(
    s: Strategy, partners, alpha: float, game: StageGame, step_size: float, pop: Population,
    self_pairings: int = 1,
) -> Strategy:
    """One projected-gradient ascent step on J; J uses noiseless payoffs."""
    params = _ascend(
        s.parameters(),
        [pop[pid].parameters() for pid, _ in partners],
        normalized_weights([float(w) for _, w in partners]),
        alpha * self_pairings,
        game.noiseless(),
        step_size,
        steps=1,
    )
    return s.with_parameters(params)


def _ascend(params, partner_params, partner_weights, self_weight, game, step_size, steps):
    size = game.action_count
    for _ in range(steps):
        if game.kind == ONE_SHOT:
            grad = objective_gradient(params, partner_params, partner_weights, self_weight, game)
        else:
            grad = finite_difference_gradient(
                lambda batch: batch_objective(batch, partner_params, partner_weights, self_weight, game),
                params,
                project=lambda p: project_parameters(p, size),
            )
        if not np.all(np.isfinite(grad)):
            raise TrainingError("non-finite objective gradient")
        params = project_parameters(params + step_size * grad, size)
        if not np.all(np.isfinite(params)):
            raise TrainingError("non-finite strategy parameters after projection")
    return params


def exact_best_response(phi, pop: Population, game: StageGame) -> np.ndarray:
    """Pure action maximizing the φ-mixture payoff; ties go to the smallest index."""
    if game.kind != ONE_SHOT:
        raise InvalidInputError("exact best response is only defined for one-shot games")
    sym = (game.utility + game.utility.T) / 2.0
    mixture = sum(weight * strategy.first_round for weight, strategy in zip(phi, pop.strategies()))
    vertex = np.zeros(game.action_count)
    vertex[int(np.argmax(sym @ mixture))] = 1.0
    return vertex


# =============================================================================
# TRAINING
# =============================================================================


def _phi_vector(phi, pop: Population) -> np.ndarray:
    if hasattr(phi, "phi"):
        if phi.ids is not None and tuple(phi.ids) != pop.ids:
            raise InvalidInputError("phi ids do not match the population")
        phi = phi.phi
    phi = np.asarray(phi, dtype=np.float64)
    if phi.shape != (len(pop),):
        raise InvalidInputError(f"phi has {phi.shape} entries for a population of {len(pop)}")
    return phi


def prospective_rank(
    candidate: Strategy, pop: Population, game: StageGame, payoff: PayoffMatrix | None = None,
    cache: PairCache | None = None, seed: int = 0,
):
    """(η, rank, payoff row) of a candidate on the (n+1)-node preference graph.

    Rank = 1 + number of incumbents with strictly smaller η, so the candidate
    wins η ties; a candidate nobody prefers ranks n + 1.
    """
    cache = PairCache() if cache is None else cache
    if payoff is None:
        payoff = complete_payoff_matrix(pop, game, cache, seed)
    n = payoff.n
    row = np.array([cache.evaluate(candidate, incumbent, game, seed) for incumbent in pop.strategies()])
    self_play = cache.evaluate(candidate, candidate, game, seed)

    entries = np.empty((n + 1, n + 1))
    entries[:n, :n] = payoff.entries
    entries[n, :n] = row
    entries[:n, n] = row
    entries[n, n] = self_play
    prospective = PayoffMatrix(entries, ids=payoff.ids + (candidate.id,))
    _, centrality = preference_report(prospective)
    return float(centrality.eta[n]), centrality.rank_of(n), np.append(row, self_play)


def train_oracle(
    s_init: Strategy,
    phi,
    cfg: OracleConfig,
    pop: Population,
    game: StageGame,
    counts: VisitCounts,
    rng: np.random.Generator,
    payoff: PayoffMatrix | None = None,
    cache: PairCache | None = None,
    seed: int = 0,
    candidate_id: int | None = None,
    birth_generation: int = 0,
) -> TrainReport:
    if len(pop) == 0:
        raise InvalidInputError("oracle needs a non-empty population")
    check_compatible(s_init, game)
    phi = _phi_vector(phi, pop)
    ids = pop.ids
    training_game = game.noiseless()
    size = game.action_count
    candidate_id = pop.next_id if candidate_id is None else candidate_id
    population_params = [s.parameters() for s in pop.strategies()]
    self_weight = cfg.self_weight
    cooperative = normalized_weights(phi, cfg.cooperative_share)
    shortcut = cfg.exact_best_response and game.kind == ONE_SHOT and self_weight == 0

    def expected(params):
        return float(batch_objective(params, population_params, cooperative, self_weight, training_game)[0])

    best = None
    for attempt in range(cfg.max_restarts + 1):
        params = s_init.parameters()
        if attempt:
            params = project_parameters(params + rng.uniform(-RESTART_NOISE, RESTART_NOISE, len(params)), size)
        trace = [expected(params)]

        for _ in range(cfg.inner_updates):
            scores = sucg_scores(phi, counts, cfg.exploration, ids)
            drawn = sample_partners(scores, cfg.ratio_b, rng, counts, ids)
            position = {sid: i for i, sid in enumerate(ids)}
            if shortcut:
                params = exact_best_response(phi, pop, training_game)
            else:
                params = _ascend(
                    params,
                    [population_params[position[pid]] for pid in drawn],
                    normalized_weights([phi[position[pid]] for pid in drawn], cfg.cooperative_share),
                    self_weight,
                    training_game,
                    cfg.step_size,
                    cfg.steps_per_update,
                )
            trace.append(expected(params))

        candidate = s_init.with_parameters(params, id=candidate_id, birth_generation=birth_generation)
        eta, rank, row = prospective_rank(candidate, pop, game, payoff, cache, seed)
        report = TrainReport(candidate, eta, rank, rank <= cfg.k, trace, attempt + 1, row)
        logger.debug("attempt %d: eta=%.4f rank=%d objective=%.4f", attempt + 1, eta, rank, trace[-1])
        if report.rank_satisfied:
            return report
        if best is None or report.rank < best.rank:
            best = report

    logger.warning(
        "oracle assumption violated: best candidate rank %d > k=%d after %d restarts",
        best.rank, cfg.k, cfg.max_restarts,
    )
    return replace(best, attempts=cfg.max_restarts + 1)
