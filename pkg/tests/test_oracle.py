import logging

import numpy as np
import pytest

from conftest import pure
from concord_env import (
    ONE_SHOT,
    PairCache,
    Population,
    StageGame,
    complete_payoff_matrix,
    evaluate_pair,
    random_strategy,
    uniform_strategy,
)
from concord_errors import InvalidInputError
from concord_graph import preference_report
from concord_oracle import (
    OracleConfig,
    batch_objective,
    best_response_step,
    exact_best_response,
    finite_difference_gradient,
    normalized_weights,
    objective,
    objective_gradient,
    project_parameters,
    project_simplex,
    prospective_rank,
    train_oracle,
)
from concord_sampler import VisitCounts


def conventions_population():
    return Population([pure(a, strategy_id=a) for a in range(3)])


def zero_counts(pop):
    return VisitCounts({sid: 0 for sid in pop.ids})


class TestProjection:
    def test_simplex_point_unchanged(self):
        np.testing.assert_array_equal(project_simplex([0.2, 0.3, 0.5]), [0.2, 0.3, 0.5])

    def test_clips_to_vertex(self):
        np.testing.assert_allclose(project_simplex([2.0, 0.0, 0.0]), [1.0, 0.0, 0.0])

    def test_uniform_shift(self):
        np.testing.assert_allclose(project_simplex([0.5, 0.5, 0.5]), [1 / 3] * 3)

    def test_negative_entry(self):
        np.testing.assert_allclose(project_simplex([-1.0, 0.5, 0.2]), [0.0, 0.65, 0.35])

    def test_blocks_projected_independently(self, rng):
        projected = project_parameters(rng.normal(size=12), 3)
        np.testing.assert_allclose(projected.reshape(4, 3).sum(axis=1), 1.0, atol=1e-12)
        assert np.all(projected >= 0)


class TestObjective:
    game = StageGame(ONE_SHOT, [[6.0, 4.0, 2.0], [4.0, 1.0, 0.0], [2.0, 0.0, 1.0]])

    def population(self):
        return Population([pure(0, strategy_id=0), pure(1, strategy_id=1), pure(2, strategy_id=2)])

    def test_hand_example(self):
        pop = self.population()
        assert objective(pop[0], [(1, 0.5), (2, 0.5)], 1.0, self.game, pop) == pytest.approx(9.0)

    def test_single_partner_without_self_term(self):
        pop = self.population()
        assert objective(pop[0], [(1, 1.0)], 0.0, self.game, pop) == pytest.approx(4.0)

    def test_partner_weights_are_normalized(self):
        pop = self.population()
        assert objective(pop[0], [(1, 0.25)], 0.0, self.game, pop) == pytest.approx(4.0)
        assert objective(pop[0], [(1, 0.1), (2, 0.3)], 0.0, self.game, pop) == pytest.approx(0.25 * 4.0 + 0.75 * 2.0)

    def test_normalized_weights_share(self):
        np.testing.assert_allclose(normalized_weights([0.2, 0.6], 0.5), [0.125, 0.375])
        np.testing.assert_array_equal(normalized_weights([0.0, 0.0]), [0.0, 0.0])

    def test_no_partners_is_self_play(self):
        pop = self.population()
        assert objective(pop[0], [], 1.0, self.game, pop) == pytest.approx(6.0)

    def test_two_stage_matches_evaluation(self, two_stage, rng):
        for _ in range(10):
            pop = Population([random_strategy(two_stage, rng, i) for i in range(2)])
            s, p = pop[0], pop[1]
            assert objective(s, [(1, 1.0)], 0.0, two_stage, pop) == pytest.approx(evaluate_pair(s, p, two_stage), abs=1e-10)
            assert objective(s, [], 1.0, two_stage, pop) == pytest.approx(evaluate_pair(s, s, two_stage), abs=1e-10)

    def test_batch_rows_independent(self, one_shot, rng):
        batch = np.array([rng.dirichlet(np.ones(3)) for _ in range(4)])
        partners = [rng.dirichlet(np.ones(3))]
        together = batch_objective(batch, partners, [1.0], 0.5, one_shot)
        alone = [batch_objective(row, partners, [1.0], 0.5, one_shot)[0] for row in batch]
        np.testing.assert_allclose(together, alone, atol=1e-12)


class TestGradient:
    def test_analytic_matches_finite_differences(self, one_shot, rng):
        for _ in range(50):
            params = rng.dirichlet(np.ones(3))
            partners = [rng.dirichlet(np.ones(3)) for _ in range(int(rng.integers(1, 5)))]
            weights = list(rng.uniform(0.0, 1.0, size=len(partners)))
            self_weight = float(rng.uniform(0.0, 2.0))
            analytic = objective_gradient(params, partners, weights, self_weight, one_shot)
            numeric = finite_difference_gradient(
                lambda batch: batch_objective(batch, partners, weights, self_weight, one_shot), params
            )
            np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-8)

    def test_analytic_needs_one_shot(self, two_stage):
        with pytest.raises(InvalidInputError):
            objective_gradient(np.ones(3) / 3, [], [], 1.0, two_stage)

    def test_zero_step_leaves_strategy(self, one_shot):
        pop = conventions_population()
        s = uniform_strategy(one_shot, 5)
        stepped = best_response_step(s, [(1, 0.5), (2, 0.5)], 1.0, one_shot, 0.0, pop)
        np.testing.assert_allclose(stepped.first_round, s.first_round, atol=1e-12)

    def test_step_moves_toward_partner(self, one_shot):
        pop = conventions_population()
        s = uniform_strategy(one_shot, 5)
        stepped = best_response_step(s, [(1, 1.0)], 0.0, one_shot, 0.1, pop)
        assert stepped.first_round[1] > s.first_round[1]
        assert stepped.first_round.sum() == pytest.approx(1.0)


class TestExactBestResponse:
    def test_single_partner(self, one_shot):
        vertex = exact_best_response([0.0, 1.0, 0.0], conventions_population(), one_shot)
        assert list(vertex) == [0.0, 1.0, 0.0]

    def test_weighted_toward_third_convention(self, one_shot):
        vertex = exact_best_response([0.1, 0.1, 0.8], conventions_population(), one_shot)
        assert list(vertex) == [0.0, 0.0, 1.0]

    def test_needs_one_shot(self, two_stage):
        with pytest.raises(InvalidInputError):
            exact_best_response([1.0], Population([uniform_strategy(two_stage)]), two_stage)


class TestProspectiveRank:
    def test_matches_recomputed_graph(self, two_stage, rng):
        pop = Population([random_strategy(two_stage, rng, i) for i in range(5)])
        candidate = random_strategy(two_stage, rng, 5)
        cache = PairCache()
        eta, rank, row = prospective_rank(candidate, pop, two_stage, cache=cache)
        pop.add(candidate)
        _, centrality = preference_report(complete_payoff_matrix(pop, two_stage, cache))
        assert eta == centrality.eta[-1]
        assert rank == centrality.rank_of(5)
        assert len(row) == 6

    def test_candidate_wins_ties(self, one_shot):
        pop = Population([pure(0, strategy_id=0)])
        _, rank, _ = prospective_rank(pure(1, strategy_id=1), pop, one_shot)
        assert rank == 1

    def test_duplicate_of_incumbent_is_unpreferred(self, one_shot):
        pop = Population([pure(0, strategy_id=0), pure(0, strategy_id=1), pure(1, strategy_id=2)])
        eta, rank, _ = prospective_rank(pure(0, strategy_id=3), pop, one_shot)
        assert eta == 1.0
        assert rank == 4


class TestTrainOracle:
    def test_shortcut_finds_weighted_convention(self, one_shot, rng):
        pop = conventions_population()
        cfg = OracleConfig(alpha=0.0, k=1, inner_updates=3, exact_best_response=True)
        report = train_oracle(uniform_strategy(one_shot, 0), [0.1, 0.1, 0.8], cfg, pop, one_shot, zero_counts(pop), rng)
        assert list(report.final_strategy.first_round) == [0.0, 0.0, 1.0]
        assert report.final_strategy.id == 3
        assert report.rank == 1
        assert report.rank_satisfied
        assert all(b >= a for a, b in zip(report.objective_trace, report.objective_trace[1:]))

    def test_ascent_concentrates_on_weighted_convention(self, one_shot, rng):
        pop = conventions_population()
        cfg = OracleConfig(alpha=0.0, k=3, inner_updates=10, step_size=0.1, exploration=0.0)
        report = train_oracle(uniform_strategy(one_shot, 0), [0.1, 0.1, 0.8], cfg, pop, one_shot, zero_counts(pop), rng)
        assert int(np.argmax(report.final_strategy.first_round)) == 2

    def test_population_of_one(self, one_shot, rng):
        pop = Population([uniform_strategy(one_shot, 0)])
        cfg = OracleConfig(k=1, inner_updates=2, steps_per_update=5)
        report = train_oracle(pop.latest(), [1.0], cfg, pop, one_shot, zero_counts(pop), rng)
        assert report.rank == 1
        assert report.rank_satisfied
        assert report.final_strategy.id == 1

    def test_failure_reported_after_restarts(self, one_shot, rng, caplog):
        pop = Population([pure(0, strategy_id=i) for i in range(3)])
        cfg = OracleConfig(alpha=0.0, k=1, inner_updates=1, steps_per_update=1, step_size=0.0, max_restarts=2)
        with caplog.at_level(logging.WARNING, logger="concord.oracle"):
            report = train_oracle(pure(1), [1 / 3] * 3, cfg, pop, one_shot, zero_counts(pop), rng)
        assert report.rank == 4
        assert report.eta == 1.0
        assert not report.rank_satisfied
        assert report.attempts == 3
        assert "oracle assumption violated" in caplog.text

    def test_self_play_ratio_draws_nobody(self, one_shot, rng):
        pop = conventions_population()
        counts = zero_counts(pop)
        cfg = OracleConfig(ratio_a=1, ratio_b=0, inner_updates=3, steps_per_update=2)
        train_oracle(uniform_strategy(one_shot, 0), [1 / 3] * 3, cfg, pop, one_shot, counts, rng)
        assert counts.total() == 0

    def test_cooperative_draws_counted(self, one_shot, rng):
        pop = conventions_population()
        counts = zero_counts(pop)
        cfg = OracleConfig(ratio_b=3, inner_updates=4, steps_per_update=2, k=4)
        train_oracle(uniform_strategy(one_shot, 0), [1 / 3] * 3, cfg, pop, one_shot, counts, rng)
        assert counts.total() == 12

    def test_two_stage_candidate_on_simplex(self, two_stage, rng):
        pop = Population([random_strategy(two_stage, rng, i) for i in range(2)])
        cfg = OracleConfig(inner_updates=2, steps_per_update=2, k=3)
        report = train_oracle(pop.latest(), [0.5, 0.5], cfg, pop, two_stage, zero_counts(pop), rng)
        s = report.final_strategy
        assert s.first_round.sum() == pytest.approx(1.0, abs=1e-9)
        np.testing.assert_allclose(s.response.sum(axis=1), 1.0, atol=1e-9)
        assert 0.0 <= report.eta <= 1.0

    def test_phi_length_checked(self, one_shot, rng):
        pop = conventions_population()
        with pytest.raises(InvalidInputError):
            train_oracle(uniform_strategy(one_shot), [0.5, 0.5], OracleConfig(), pop, one_shot, zero_counts(pop), rng)

    def test_config_validation(self):
        with pytest.raises(InvalidInputError):
            OracleConfig(ratio_a=0, ratio_b=0)
        with pytest.raises(InvalidInputError):
            OracleConfig(k=0)
        cfg = OracleConfig(alpha=2.0, ratio_a=3)
        assert cfg.self_weight == pytest.approx(1.0)
        assert cfg.cooperative_share == pytest.approx(0.5)
