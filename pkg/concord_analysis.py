#!/usr/bin/env python3
"""
Concord Run Analysis
====================

Read a finished (or partial) run directory and turn it into plottable data:
centrality matrices, per-generation η/rank series, convergence diagnostics,
the incompatibility verdict, and cross-play reports against probe strategies.

Usage:
    from concord_analysis import RunAnalysis

    analysis = RunAnalysis("runs/cole-sv-seed0")
    print(analysis.verdict(k=3))
    analysis.write_reports("runs/cole-sv-seed0/analysis")
"""

import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from concord_engine import GenerationRecord, GenerationTrace, convergence_monitor
from concord_env import StageGame, check_compatible, evaluate_pair, stubborn_strategy
from concord_errors import InvalidInputError, SnapshotError
from concord_graph import preference_report, sub_preference_graphs
from concord_io import RunDirectory, atomic_write_text, csv_text, format_value

logger = logging.getLogger("concord.analysis")

# Analysis fails when more snapshots than this are unreadable
MAX_SKIPPED_FRACTION = 0.10

# Cross-play experiment thresholds
COLE_MIN_CROSSPLAY = 5.0
SELF_PLAY_MAX_CROSSPLAY = 1.0
COLE_RANK_FRACTION = 0.8
SELF_PLAY_RANK_FRACTION = 0.4
REQUIRED_SEED_SHARE = 0.8


def _cell(value) -> str:
    return "" if value is None else format_value(value)


# =============================================================================
# CENTRALITY MATRICES
# =============================================================================


def centrality_rows(trace: GenerationTrace) -> tuple:
    """(columns, rows): one row per generation, one column per StrategyId.

    Row t holds η of every strategy in the pre-eviction snapshot t; strategies
    outside that snapshot are None.
    """
    columns = sorted({sid for payoff in trace.payoffs.values() for sid in payoff.ids})
    rows = []
    for record in trace.records:
        snapshot = trace.payoffs[record.generation]
        _, centrality = preference_report(snapshot)
        eta = dict(zip(snapshot.ids, centrality.eta))
        rows.append((record.generation, [eta.get(sid) for sid in columns]))
    return columns, rows


def prefix_centrality_rows(trace: GenerationTrace) -> tuple:
    """Sub-preference centrality of the final snapshot, one row per creation prefix."""
    if not trace.records:
        return [], []
    final = trace.payoffs[trace.records[-1].generation]
    columns = sorted(final.ids)
    if final.n < 2:
        return columns, []
    rows = []
    for prefix_len, (_, centrality) in enumerate(sub_preference_graphs(final, columns), start=2):
        values = list(centrality.eta) + [None] * (len(columns) - prefix_len)
        rows.append((prefix_len, values))
    return columns, rows


def matrix_text(label: str, columns, rows) -> str:
    header = [label] + [str(c) for c in columns]
    return csv_text(header, [[key] + [_cell(v) for v in values] for key, values in rows])


def series_text(records) -> str:
    header = ["generation", "new_id", "eta", "rank", "rank_satisfied", "attempts", "mean_payoff", "evicted_id"]
    rows = [
        [
            r.generation,
            r.new_id,
            format_value(r.eta),
            r.rank,
            int(r.rank_satisfied),
            r.attempts,
            format_value(r.mean_payoff),
            "" if r.evicted_id is None else r.evicted_id,
        ]
        for r in records
    ]
    return csv_text(header, rows)


def verdict(records, k: int) -> float:
    """Fraction of generations whose new strategy ranked within the top k."""
    if not records:
        return 0.0
    return sum(1 for r in records if r.rank <= k) / len(records)


def second_half(records) -> list:
    return list(records)[len(records) // 2:]


# =============================================================================
# RUN DIRECTORY READER
# =============================================================================


class RunAnalysis:
    """Reader over one run directory. Corrupt snapshots are skipped with a warning."""

    def __init__(self, root: str):
        self.run_dir = RunDirectory(root)
        self.skipped = []
        self.trace = self._load()

    def _load(self) -> GenerationTrace:
        config = self.run_dir.read_config()
        trace = GenerationTrace(config=config)
        for raw in self.run_dir.read_trace():
            record = GenerationRecord.from_dict(raw)
            try:
                ids = [s.id for s in self.run_dir.read_population(record.generation)]
                trace.payoffs[record.generation] = self.run_dir.read_payoff(record.generation, ids)
            except SnapshotError as e:
                logger.warning("skipping generation %d: %s", record.generation, e)
                self.skipped.append(record.generation)
                continue
            trace.records.append(record)
        return trace

    @property
    def skipped_fraction(self) -> float:
        total = len(self.trace.records) + len(self.skipped)
        return len(self.skipped) / total if total else 0.0

    @property
    def too_many_skipped(self) -> bool:
        return self.skipped_fraction > MAX_SKIPPED_FRACTION

    def k(self, override=None) -> int:
        return int(override if override is not None else self.trace.config.get("oracle.k", 3))

    def verdict(self, k=None) -> float:
        return verdict(self.trace.records, self.k(k))

    def convergence(self, k=None):
        if len(self.trace.records) < 2:
            return None
        return convergence_monitor(self.trace, self.k(k))

    def final_strategy(self):
        """Latest-created strategy of the last snapshot."""
        if not self.trace.records:
            raise SnapshotError("run has no completed generations")
        strategies = self.run_dir.read_population(self.trace.records[-1].generation)
        return max(strategies, key=lambda s: s.id)

    def summary(self, k=None) -> dict:
        k = self.k(k)
        report = self.convergence(k)
        return {
            "generations": len(self.trace.records),
            "skipped": list(self.skipped),
            "k": k,
            "verdict": self.verdict(k),
            "second_half_verdict": verdict(second_half(self.trace.records), k),
            "convergence": None if report is None else report.to_dict(),
        }

    def write_reports(self, out_dir: str, k=None):
        """Write every analysis file; identical inputs give identical bytes."""
        columns, rows = centrality_rows(self.trace)
        atomic_write_text(os.path.join(out_dir, "centrality_matrix.csv"), matrix_text("generation", columns, rows))
        columns, rows = prefix_centrality_rows(self.trace)
        atomic_write_text(os.path.join(out_dir, "prefix_centrality.csv"), matrix_text("prefix", columns, rows))
        atomic_write_text(os.path.join(out_dir, "series.csv"), series_text(self.trace.records))
        atomic_write_text(
            os.path.join(out_dir, "summary.json"), json.dumps(self.summary(k), sort_keys=True, indent=2) + "\n"
        )


# =============================================================================
# CROSS-PLAY
# =============================================================================


@dataclass(frozen=True)
class CrossPlayRow:
    id: int
    min: float
    mean: float
    max: float
    self_play: float


@dataclass(frozen=True)
class CrossPlayReport:
    rows: list
    probe_ids: list = field(default_factory=list)

    def row(self, strategy_id: int) -> CrossPlayRow:
        return next(r for r in self.rows if r.id == strategy_id)


def crossplay(population, probes, game: StageGame, seed: int = 0) -> CrossPlayReport:
    """Evaluate every strategy against every probe: min / mean / max, plus self-play."""
    probes = list(probes)
    if not probes:
        raise InvalidInputError("cross-play needs at least one probe")
    for strategy in list(population) + probes:
        check_compatible(strategy, game)
    rows = []
    for strategy in population:
        payoffs = np.array([evaluate_pair(strategy, probe, game, seed) for probe in probes])
        rows.append(
            CrossPlayRow(
                strategy.id,
                float(payoffs.min()),
                float(payoffs.mean()),
                float(payoffs.max()),
                evaluate_pair(strategy, strategy, game, seed),
            )
        )
    return CrossPlayReport(rows, [p.id for p in probes])


def stubborn_probes(game: StageGame) -> list:
    return [stubborn_strategy(game, a, strategy_id=a) for a in range(game.action_count)]


def crossplay_text(report: CrossPlayReport) -> str:
    rows = [
        [r.id, format_value(r.min), format_value(r.mean), format_value(r.max), format_value(r.self_play)]
        for r in report.rows
    ]
    return csv_text(["id", "min", "mean", "max", "self_play"], rows)


# =============================================================================
# CROSS-PLAY EXPERIMENT SUMMARY
# =============================================================================


def run_statistics(root: str, game: StageGame, k=None) -> dict:
    """Per-run statistics used by the acceptance summary."""
    analysis = RunAnalysis(root)
    k = analysis.k(k)
    final = analysis.final_strategy()
    report = crossplay([final], stubborn_probes(game), game)
    convergence = analysis.convergence(k)
    return {
        "run": root,
        "final_id": final.id,
        "min_crossplay": report.rows[0].min,
        "second_half_verdict": verdict(second_half(analysis.trace.records), k),
        "monotone": True if convergence is None else convergence.monotone,
    }


def _seed_count(flags) -> tuple:
    flags = list(flags)
    needed = math.ceil(REQUIRED_SEED_SHARE * len(flags))
    return sum(flags), needed


def acceptance_summary(stats: dict) -> dict:
    """Combine per-seed statistics of the cole-sv, cole-r and self-play runs.

    `stats` maps a label to a list of run_statistics dicts, aligned by seed.
    """
    sv, r, sp = stats.get("cole-sv", []), stats.get("cole-r", []), stats.get("self-play", [])
    if not sv or len(sv) != len(sp):
        raise InvalidInputError("cole-sv and self-play need the same non-empty set of seeds")

    phenomenon = [
        a["min_crossplay"] >= COLE_MIN_CROSSPLAY and b["min_crossplay"] <= SELF_PLAY_MAX_CROSSPLAY
        for a, b in zip(sv, sp)
    ]
    diagonal = [
        a["second_half_verdict"] >= COLE_RANK_FRACTION and b["second_half_verdict"] <= SELF_PLAY_RANK_FRACTION
        for a, b in zip(sv, sp)
    ]
    passed, needed = _seed_count(phenomenon)
    diag_passed, _ = _seed_count(diagonal)
    summary = {
        "seeds": len(sv),
        "required": needed,
        "crossplay": {"passed": passed, "ok": passed >= needed},
        "rank_fraction": {"passed": diag_passed, "ok": diag_passed >= needed},
        "monotone": {"ok": all(s["monotone"] for s in sv + r + sp)},
    }
    if r:
        reward_ok = [s["min_crossplay"] >= COLE_MIN_CROSSPLAY for s in r]
        reward_passed, _ = _seed_count(reward_ok)
        gaps = [a["min_crossplay"] - b["min_crossplay"] for a, b in zip(sv, r)]
        summary["solver_contrast"] = {
            "reward_passed": reward_passed,
            "ok": passed >= needed and reward_passed >= needed,
            "mean_gap": float(np.mean(gaps)),
        }
    return summary
