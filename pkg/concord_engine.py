"""
Concord Generation Engine

Runs the open-ended loop one generation at a time:

    1. complete the payoff matrix (cache-incremental)
    2. solve the incompatibility distribution φ (SV or R flag)
    3. train the best-preferred candidate against φ
    4. expand the population, evicting one of the oldest when over cap

Every completed generation is persisted (snapshot, trace record, checkpoint)
before the next one starts, so an aborted run keeps everything up to the last
completed generation and can be resumed.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from concord_config import env_from_config, oracle_from_config
from concord_env import (
    INITIAL_KINDS,
    PairCache,
    Population,
    StageGame,
    complete_payoff_matrix,
    memoryless_strategy,
    random_strategy,
    uniform_strategy,
)
from concord_errors import ConcordError, InvalidInputError
from concord_graph import PayoffMatrix, preference_report
from concord_io import RunDirectory
from concord_oracle import OracleConfig, train_oracle
from concord_sampler import VisitCounts
from concord_solvers import WPG_DAMPING, solve

logger = logging.getLogger("concord.engine")


@dataclass(frozen=True)
class EngineConfig:
    game: StageGame
    oracle: OracleConfig = field(default_factory=OracleConfig)
    solver_flag: str = "SV"
    generations: int = 60
    pop_cap: int = 50
    evict_window: int = 10
    seed: int = 0
    solver_samples: int | None = None
    damping: float = WPG_DAMPING
    initial_size: int = 1
    initial_kind: str = "uniform"
    initial_concentration: float = 1.0

    def __post_init__(self):
        if self.solver_flag.upper() not in ("SV", "R"):
            raise InvalidInputError(f"unknown solver flag {self.solver_flag!r}")
        if self.generations < 0 or self.pop_cap < 1 or self.evict_window < 1:
            raise InvalidInputError("generations, pop_cap and evict_window out of range")
        if self.evict_window > self.pop_cap:
            raise InvalidInputError("evict_window must not exceed pop_cap")
        if not 1 <= self.initial_size <= self.pop_cap:
            raise InvalidInputError("initial_size must lie in 1..pop_cap")
        if self.initial_kind not in INITIAL_KINDS:
            raise InvalidInputError(f"unknown initial kind {self.initial_kind!r}, expected one of {INITIAL_KINDS}")
        if self.initial_concentration <= 0:
            raise InvalidInputError("initial_concentration must be positive")

    @classmethod
    def from_flat(cls, flat: dict) -> EngineConfig:
        return cls(
            game=env_from_config(flat),
            oracle=oracle_from_config(flat),
            solver_flag=flat["solver.flag"],
            generations=flat["engine.generations"],
            pop_cap=flat["engine.pop_cap"],
            evict_window=flat["engine.evict_window"],
            seed=flat["engine.seed"],
            solver_samples=flat["solver.samples"] or None,
            damping=flat["solver.damping"],
            initial_size=flat["engine.initial_size"],
            initial_kind=flat["engine.initial_kind"],
            initial_concentration=flat["engine.initial_concentration"],
        )


@dataclass
class RunState:
    pop: Population
    counts: VisitCounts
    rng: np.random.Generator
    cache: PairCache = field(default_factory=PairCache)
    generation: int = 0
    evicted: list = field(default_factory=list)


@dataclass(frozen=True)
class GenerationRecord:
    generation: int
    new_id: int
    eta: float
    rank: int
    rank_satisfied: bool
    phi: list
    phi_ids: list
    payoff_row: list
    evicted_id: int | None = None
    attempts: int = 1
    objective: float = 0.0
    mean_payoff: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> GenerationRecord:
        return cls(**data)


@dataclass
class GenerationTrace:
    records: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    # generation -> pre-eviction PayoffMatrix (ids attached)
    payoffs: dict = field(default_factory=dict)


# =============================================================================
# GENERATION STEP
# =============================================================================


def initial_state(cfg: EngineConfig) -> RunState:
    rng = np.random.default_rng(cfg.seed)
    if cfg.initial_kind in ("random", "memoryless"):
        make = random_strategy if cfg.initial_kind == "random" else memoryless_strategy
        strategies = [
            make(cfg.game, rng, i, concentration=cfg.initial_concentration) for i in range(cfg.initial_size)
        ]
    else:
        strategies = [uniform_strategy(cfg.game, 0)]
    pop = Population(strategies)
    counts = VisitCounts({s.id: 0 for s in strategies})
    return RunState(pop, counts, rng)


def evict_if_full(pop: Population, cap: int, window: int, rng: np.random.Generator, counts=None, cache=None):
    """Drop one of the `window` oldest strategies when |pop| > cap; returns its id."""
    if window > cap:
        raise InvalidInputError("evict_window must not exceed pop_cap")
    if len(pop) <= cap:
        return None
    eligible = pop.oldest(window)
    evicted = eligible[int(rng.integers(len(eligible)))].id
    pop.remove(evicted)
    if counts is not None:
        counts.drop(evicted)
    if cache is not None:
        cache.drop(evicted)
    return evicted


def run_generation(state: RunState, cfg: EngineConfig):
    """Advance one generation; returns (state, record, pre-eviction snapshot)."""
    if len(state.pop) == 0:
        raise InvalidInputError("population is empty")
    t = state.generation + 1
    pop, game = state.pop, cfg.game

    payoff = complete_payoff_matrix(pop, game, state.cache, cfg.seed)
    dist = solve(payoff, cfg.solver_flag, state.rng, cfg.solver_samples, cfg.damping)

    report = train_oracle(
        pop.latest(),
        dist,
        cfg.oracle,
        pop,
        game,
        state.counts,
        state.rng,
        payoff=payoff,
        cache=state.cache,
        seed=cfg.seed,
        candidate_id=pop.next_id,
        birth_generation=t,
    )
    new = report.final_strategy
    pop.add(new)
    state.counts.register(new.id)

    snapshot = complete_payoff_matrix(pop, game, state.cache, cfg.seed)
    strategies = pop.strategies()
    visits = state.counts.as_dict()
    evicted = evict_if_full(pop, cfg.pop_cap, cfg.evict_window, state.rng, state.counts, state.cache)
    if evicted is not None:
        state.evicted.append(evicted)
    state.generation = t

    record = GenerationRecord(
        generation=t,
        new_id=new.id,
        eta=report.eta,
        rank=report.rank,
        rank_satisfied=report.rank_satisfied,
        phi=[float(v) for v in dist.phi],
        phi_ids=list(payoff.ids),
        payoff_row=[float(v) for v in snapshot.entries[-1]],
        evicted_id=evicted,
        attempts=report.attempts,
        objective=float(report.objective_trace[-1]),
        mean_payoff=float(snapshot.entries.mean()),
    )
    logger.info(
        "gen %d: new=%d eta=%.3f rank=%d%s phi_max=%.3f n=%d",
        t, new.id, report.eta, report.rank, "" if report.rank_satisfied else " (rank > k)",
        float(dist.phi.max()), snapshot.n,
    )
    return state, record, (strategies, visits, snapshot)


# =============================================================================
# RUN LOOP
# =============================================================================


def _checkpoint(run_dir: RunDirectory, state: RunState):
    meta = {
        "generation": state.generation,
        "next_id": state.pop.next_id,
        "rng_state": state.rng.bit_generator.state,
        "evicted": list(state.evicted),
    }
    run_dir.write_checkpoint(meta, state.pop.strategies(), state.counts.as_dict())


def _restore(run_dir: RunDirectory, cfg: EngineConfig) -> RunState:
    meta, strategies, visits = run_dir.read_checkpoint()
    rng = np.random.default_rng(cfg.seed)
    rng.bit_generator.state = meta["rng_state"]
    pop = Population(strategies, next_id=meta["next_id"])
    return RunState(pop, VisitCounts(visits), rng, generation=meta["generation"], evicted=list(meta["evicted"]))


def load_trace(run_dir: RunDirectory) -> GenerationTrace:
    """Rebuild a trace (records plus payoff snapshots) from a run directory."""
    records = [GenerationRecord.from_dict(r) for r in run_dir.read_trace()]
    trace = GenerationTrace(records, run_dir.read_config())
    for record in records:
        ids = [s.id for s in run_dir.read_population(record.generation)]
        trace.payoffs[record.generation] = run_dir.read_payoff(record.generation, ids)
    return trace


def run(cfg: EngineConfig, run_dir: RunDirectory | None = None, flat: dict | None = None, resume: bool = False) -> GenerationTrace:
    trace = GenerationTrace(config=dict(flat or {}))
    if resume:
        if run_dir is None or not run_dir.exists():
            raise InvalidInputError("nothing to resume: no checkpoint in the run directory")
        state = _restore(run_dir, cfg)
        run_dir.truncate_trace(state.generation)
        resumed = load_trace(run_dir)
        trace.records, trace.payoffs = resumed.records, resumed.payoffs
        logger.info("resuming at generation %d (n=%d)", state.generation + 1, len(state.pop))
    else:
        state = initial_state(cfg)
        if run_dir is not None:
            run_dir.write_config(trace.config)
            run_dir.write_population(0, state.pop.strategies(), state.counts.as_dict())
            run_dir.truncate_trace(0)
            _checkpoint(run_dir, state)

    try:
        while state.generation < cfg.generations:
            state, record, (strategies, visits, snapshot) = run_generation(state, cfg)
            trace.records.append(record)
            trace.payoffs[record.generation] = snapshot
            if run_dir is not None:
                run_dir.write_population(record.generation, strategies, visits)
                run_dir.write_payoff(record.generation, snapshot)
                run_dir.append_trace(record.to_dict())
                _checkpoint(run_dir, state)
    except ConcordError as e:
        logger.error("run aborted in generation %d: %s", state.generation + 1, e)
        raise
    return trace


# =============================================================================
# CONVERGENCE MONITOR
# =============================================================================


@dataclass(frozen=True)
class ConvergenceReport:
    generations: list
    group_max_eta: list
    monotone: bool
    violations: list
    excluded: list
    new_eta: list
    ratios: list
    rank_mismatches: list

    def to_dict(self) -> dict:
        return asdict(self)


def _group_max(eta, k):
    group = np.sort(eta)[: min(k, len(eta))]
    return float(group.max())


def convergence_monitor(trace: GenerationTrace, k: int) -> ConvergenceReport:
    """Offline diagnostics on a trace: group-η monotonicity and η ratios.

    g_t holds the k lowest-η strategies of snapshot t; the max η over g_t
    must not increase between consecutive rank-satisfied generations.
    Transitions touching a snapshot with n <= k are excluded: g_t is then the
    whole population, and its max η is the least preferred strategy's.
    Ratios η_{t+1}/η_t of the new strategies skip zero denominators.
    """
    records = trace.records
    if len(records) < 2:
        raise InvalidInputError("convergence monitoring needs at least two generations")
    if k < 1:
        raise InvalidInputError("k must be >= 1")

    group_max, mismatches = [], []
    for record in records:
        snapshot: PayoffMatrix = trace.payoffs[record.generation]
        _, centrality = preference_report(snapshot)
        group_max.append(_group_max(centrality.eta, k))
        if record.rank_satisfied:
            position = snapshot.ids.index(record.new_id)
            if centrality.rank_of(position) != record.rank:
                mismatches.append(record.generation)

    violations, excluded = [], []
    for prev, cur, prev_max, cur_max in zip(records, records[1:], group_max, group_max[1:]):
        small = min(trace.payoffs[prev.generation].n, trace.payoffs[cur.generation].n) <= k
        if small or not (prev.rank_satisfied and cur.rank_satisfied):
            excluded.append(cur.generation)
        elif cur_max > prev_max:
            violations.append(cur.generation)

    new_eta = [r.eta for r in records]
    ratios = [after / before for before, after in zip(new_eta, new_eta[1:]) if before != 0]
    return ConvergenceReport(
        generations=[r.generation for r in records],
        group_max_eta=group_max,
        monotone=not violations,
        violations=violations,
        excluded=excluded,
        new_eta=new_eta,
        ratios=ratios,
        rank_mismatches=mismatches,
    )
