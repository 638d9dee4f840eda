import numpy as np
import pytest

from conftest import pure
from concord_engine import (
    EngineConfig,
    GenerationRecord,
    GenerationTrace,
    convergence_monitor,
    evict_if_full,
    initial_state,
    load_trace,
    run,
)
from concord_env import PairCache, Population, Strategy
from concord_errors import InvalidInputError
from concord_graph import PayoffMatrix
from concord_io import RunDirectory
from concord_oracle import OracleConfig
from concord_sampler import VisitCounts


def small_config(game, **changes):
    settings = dict(
        game=game,
        oracle=OracleConfig(inner_updates=2, steps_per_update=3, step_size=0.01),
        solver_samples=200,
        generations=4,
        pop_cap=10,
        evict_window=3,
        seed=7,
    )
    settings.update(changes)
    return EngineConfig(**settings)


def record(generation, new_id, eta, rank, satisfied):
    return GenerationRecord(generation, new_id, eta, rank, satisfied, phi=[], phi_ids=[], payoff_row=[])


def aged_population(births):
    return Population([Strategy(i, [1.0], birth_generation=g) for i, g in enumerate(births)])


class TestEngineConfig:
    def test_window_bounded_by_cap(self, one_shot):
        with pytest.raises(InvalidInputError):
            small_config(one_shot, pop_cap=2, evict_window=3)

    def test_unknown_flag(self, one_shot):
        with pytest.raises(InvalidInputError):
            small_config(one_shot, solver_flag="nash")

    def test_initial_size_bounded(self, one_shot):
        with pytest.raises(InvalidInputError):
            small_config(one_shot, initial_size=11)

    def test_unknown_initial_kind(self, one_shot):
        with pytest.raises(InvalidInputError):
            small_config(one_shot, initial_kind="league")


class TestInitialState:
    def test_memoryless_openers(self, two_stage):
        cfg = small_config(two_stage, initial_kind="memoryless", initial_size=4, initial_concentration=0.3)
        state = initial_state(cfg)
        assert state.pop.ids == (0, 1, 2, 3)
        for s in state.pop:
            np.testing.assert_array_equal(s.response, np.tile(s.first_round, (3, 1)))
        assert state.counts.total() == 0

    def test_uniform_singleton(self, two_stage):
        state = initial_state(small_config(two_stage, initial_size=4))
        assert state.pop.ids == (0,)


class TestEviction:
    def test_below_cap_keeps_everyone(self, rng):
        pop = aged_population([0, 1, 2])
        assert evict_if_full(pop, 3, 2, rng) is None
        assert len(pop) == 3

    def test_window_of_one_evicts_oldest(self, rng):
        pop = aged_population([2, 0, 1])
        counts = VisitCounts({0: 1, 1: 1, 2: 1})
        assert evict_if_full(pop, 2, 1, rng, counts) == 1
        assert 1 not in counts
        assert pop.ids == (0, 2)

    def test_drops_cached_pairs(self, rng, one_shot):
        pop = Population([pure(a, strategy_id=a) for a in range(3)])
        cache = PairCache()
        for s in pop:
            cache.evaluate(s, pop[0], one_shot)
        evicted = evict_if_full(pop, 2, 2, rng, cache=cache)
        assert len(cache) == (0 if evicted == 0 else 2)

    def test_uniform_over_window(self):
        rng = np.random.default_rng(0)
        trials = 20000
        hits = np.zeros(5)
        for _ in range(trials):
            pop = aged_population([0, 1, 2, 3, 4])
            hits[evict_if_full(pop, 4, 3, rng)] += 1
        np.testing.assert_allclose(hits[:3] / trials, [1 / 3] * 3, atol=0.015)
        assert hits[3] == hits[4] == 0

    def test_window_larger_than_cap(self, rng):
        with pytest.raises(InvalidInputError):
            evict_if_full(aged_population([0, 1]), 1, 2, rng)


class TestRun:
    def test_first_generation_from_singleton(self, one_shot):
        trace = run(small_config(one_shot, generations=1))
        first = trace.records[0]
        assert first.phi == [1.0]
        assert first.phi_ids == [0]
        assert first.new_id == 1
        assert trace.payoffs[1].n == 2
        assert first.rank == 1

    def test_zero_generations(self, one_shot, tmp_path):
        run_dir = RunDirectory(str(tmp_path))
        trace = run(small_config(one_shot, generations=0), run_dir, {"engine.seed": 7})
        assert trace.records == []
        assert [s.id for s in run_dir.read_population(0)] == [0]
        assert run_dir.read_trace() == []

    def test_cap_eviction(self, one_shot):
        trace = run(small_config(one_shot, generations=2, pop_cap=2, evict_window=1))
        assert trace.records[0].evicted_id is None
        assert trace.records[1].evicted_id == 0
        # snapshots are taken before eviction
        assert trace.payoffs[2].ids == (0, 1, 2)

    def test_population_never_exceeds_cap(self, one_shot, tmp_path):
        run_dir = RunDirectory(str(tmp_path))
        trace = run(small_config(one_shot, generations=6, pop_cap=3, evict_window=2), run_dir)
        for rec in trace.records:
            assert len(run_dir.read_population(rec.generation)) <= 4
        meta, strategies, _ = run_dir.read_checkpoint()
        assert len(strategies) <= 3
        assert meta["generation"] == 6

    def test_ids_never_reused(self, one_shot):
        trace = run(small_config(one_shot, generations=6, pop_cap=3, evict_window=2))
        new_ids = [r.new_id for r in trace.records]
        assert new_ids == list(range(1, 7))

    @pytest.mark.slow
    def test_same_seed_same_trace_bytes(self, two_stage, tmp_path):
        cfg = small_config(two_stage, generations=3)
        first, second = RunDirectory(str(tmp_path / "a")), RunDirectory(str(tmp_path / "b"))
        run(cfg, first, {"engine.seed": 7})
        run(cfg, second, {"engine.seed": 7})
        a = (tmp_path / "a" / "trace.jsonl").read_bytes()
        b = (tmp_path / "b" / "trace.jsonl").read_bytes()
        assert a == b
        assert a.count(b"\n") == 3

    @pytest.mark.slow
    def test_resume_continues_identically(self, two_stage, tmp_path):
        full = RunDirectory(str(tmp_path / "full"))
        run(small_config(two_stage, generations=4), full, {})
        partial = RunDirectory(str(tmp_path / "partial"))
        run(small_config(two_stage, generations=2), partial, {})
        resumed = run(small_config(two_stage, generations=4), partial, {}, resume=True)
        assert len(resumed.records) == 4
        assert (tmp_path / "full" / "trace.jsonl").read_bytes() == (tmp_path / "partial" / "trace.jsonl").read_bytes()
        assert full.read_checkpoint()[0] == partial.read_checkpoint()[0]

    def test_resume_without_checkpoint(self, one_shot, tmp_path):
        with pytest.raises(InvalidInputError):
            run(small_config(one_shot), RunDirectory(str(tmp_path)), resume=True)

    def test_both_solver_flags_run(self, one_shot):
        for flag in ("SV", "R"):
            trace = run(small_config(one_shot, generations=3, solver_flag=flag))
            assert len(trace.records) == 3
            for rec in trace.records:
                assert sum(rec.phi) == pytest.approx(1.0)

    def test_recorded_ranks_match_snapshots(self, two_stage):
        trace = run(small_config(two_stage, generations=4))
        report = convergence_monitor(trace, k=3)
        assert report.rank_mismatches == []

    def test_load_trace_matches_memory(self, one_shot, tmp_path):
        run_dir = RunDirectory(str(tmp_path))
        trace = run(small_config(one_shot, generations=3), run_dir, {"engine.seed": 7})
        loaded = load_trace(run_dir)
        assert loaded.records == trace.records
        for generation, payoff in trace.payoffs.items():
            assert np.array_equal(loaded.payoffs[generation].entries, payoff.entries)
            assert loaded.payoffs[generation].ids == payoff.ids


class TestConvergenceMonitor:
    def synthetic_trace(self, second_satisfied):
        trace = GenerationTrace()
        trace.payoffs[1] = PayoffMatrix([[5, 1, 2], [1, 4, 3], [2, 3, 6]])
        trace.payoffs[2] = PayoffMatrix(np.full((4, 4), 1.0))
        trace.records = [record(1, 2, 0.0, 1, True), record(2, 3, 1.0, 4, second_satisfied)]
        return trace

    def test_group_increase_flagged(self):
        report = convergence_monitor(self.synthetic_trace(True), k=2)
        assert report.group_max_eta == pytest.approx([0.5, 2 / 3])
        assert report.violations == [2]
        assert not report.monotone
        assert report.rank_mismatches == []

    def test_unsatisfied_transition_excluded(self):
        report = convergence_monitor(self.synthetic_trace(False), k=2)
        assert report.excluded == [2]
        assert report.monotone

    def test_equal_snapshots_monotone(self):
        trace = GenerationTrace()
        for g in (1, 2, 3):
            trace.payoffs[g] = PayoffMatrix(np.full((3, 3), 2.0))
            trace.records.append(record(g, 2, 1.0, 3, True))
        report = convergence_monitor(trace, k=3)
        assert report.monotone
        assert report.ratios == [1.0, 1.0]

    def test_zero_denominators_skipped(self):
        report = convergence_monitor(self.synthetic_trace(True), k=2)
        assert report.new_eta == [0.0, 1.0]
        assert report.ratios == []

    def test_needs_two_generations(self):
        trace = self.synthetic_trace(True)
        trace.records = trace.records[:1]
        with pytest.raises(InvalidInputError):
            convergence_monitor(trace, k=2)

    def test_small_populations_excluded_on_engine_trace(self, one_shot):
        cfg = small_config(
            one_shot,
            oracle=OracleConfig(
                alpha=0.0, k=3, inner_updates=1, steps_per_update=1, max_restarts=0, exact_best_response=True
            ),
            generations=6,
        )
        trace = run(cfg)
        assert [trace.payoffs[g].n for g in range(1, 7)] == [2, 3, 4, 5, 6, 7]
        assert [r.rank_satisfied for r in trace.records] == [True, True, False, False, False, False]
        report = convergence_monitor(trace, k=3)
        # the first two snapshots have n <= k, so g_t is the whole population
        assert report.group_max_eta[:2] == [0.0, 1.0]
        assert report.excluded == [2, 3, 4, 5, 6]
        assert report.violations == []
        assert report.monotone
        assert report.rank_mismatches == []
