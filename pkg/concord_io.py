#!/usr/bin/env python3
"""
Run-Directory Files for Concord

Readers and writers for everything a run leaves on disk:

    <run>/config.snapshot              resolved flat config (sorted JSON)
    <run>/population/gen_<t>.csv       id,birth_generation,first_round...,response_rows...
    <run>/population/gen_<t>.visits.csv  id,visits
    <run>/payoff/gen_<t>.csv           n=<count>, then n rows of n values
    <run>/trace.jsonl                  one GenerationRecord per line
    <run>/checkpoint.meta              resume header (last generation, RNG state)

Every whole-file write goes to a temporary sibling first and is committed by
an atomic rename, so a reader sees either the old file or the new one.

Usage:
    run_dir = RunDirectory("runs/cole-sv-seed0")
    run_dir.write_payoff(3, payoff)
    payoff = run_dir.read_payoff(3)
"""

import csv
import io
import json
import os
import re

import numpy as np

from concord_env import Strategy
from concord_errors import SnapshotError
from concord_graph import PayoffMatrix

# =============================================================================
# FILE PROTOCOL
# =============================================================================

# Checkpoint header
MAGIC = "CNCD"
VERSION = 1

CONFIG_FILE = "config.snapshot"
TRACE_FILE = "trace.jsonl"
CHECKPOINT_FILE = "checkpoint.meta"
POPULATION_DIR = "population"
PAYOFF_DIR = "payoff"
CURRENT = "current"

_GEN_FILE = re.compile(r"^gen_(\d+)\.csv$")


def format_value(value) -> str:
    """Shortest decimal that round-trips the float64 exactly."""
    return repr(float(value))


def atomic_write_text(path: str, text: str):
    """Write data to a temporary sibling first, then commit with a rename."""
    directory = os.path.dirname(path) or "."
    os.makedirs(directory, exist_ok=True)
    tmp_path = f"{path}.tmp"
    with open(tmp_path, "w", encoding="utf-8", newline="") as f:
        f.write(text)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp_path, path)


def _read_text(path: str) -> str:
    try:
        with open(path, "r", encoding="utf-8", newline="") as f:
            return f.read()
    except OSError as e:
        raise SnapshotError(f"cannot read {path}: {e}") from e


def csv_text(header, rows) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    if header:
        writer.writerow(header)
    writer.writerows(rows)
    return buffer.getvalue()


def _csv_rows(text: str, path: str):
    rows = [row for row in csv.reader(io.StringIO(text)) if row]
    if not rows:
        raise SnapshotError(f"{path}: empty file")
    return rows


# =============================================================================
# PAYOFF MATRICES
# =============================================================================


def payoff_text(payoff: PayoffMatrix) -> str:
    rows = [[format_value(v) for v in row] for row in payoff.entries]
    return f"n={payoff.n}\n" + csv_text(None, rows)


def parse_payoff(text: str, path: str = "<payoff>", ids=None, symmetric=False) -> PayoffMatrix:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("n="):
        raise SnapshotError(f"{path}: missing 'n=<count>' header")
    try:
        n = int(lines[0][2:])
    except ValueError as e:
        raise SnapshotError(f"{path}: bad count line {lines[0]!r}") from e
    rows = [row for row in csv.reader(lines[1:]) if row]
    if len(rows) != n or any(len(row) != n for row in rows):
        raise SnapshotError(f"{path}: expected a square {n}x{n} matrix")
    try:
        entries = np.array([[float(v) for v in row] for row in rows], dtype=np.float64).reshape(n, n)
    except ValueError as e:
        raise SnapshotError(f"{path}: non-numeric entry ({e})") from e
    try:
        return PayoffMatrix(entries, symmetric=symmetric, ids=ids)
    except ValueError as e:
        raise SnapshotError(f"{path}: {e}") from e


def write_payoff_csv(path: str, payoff: PayoffMatrix):
    atomic_write_text(path, payoff_text(payoff))


def read_payoff_csv(path: str, ids=None) -> PayoffMatrix:
    return parse_payoff(_read_text(path), path, ids)


# =============================================================================
# PREFERENCE GRAPHS, SOLVER OUTPUT
# =============================================================================


def preference_text(pref, centrality) -> str:
    rows = [
        [sid, pref.ids[int(edge)], int(deg), format_value(eta)]
        for sid, edge, deg, eta in zip(pref.ids, pref.out_edge, centrality.in_degree, centrality.eta)
    ]
    return csv_text(["id", "out_edge", "in_degree", "eta"], rows)


def solver_text(dist) -> str:
    """`id,sigma_hat,sigma,shapley,phi`; shapley is blank for the reward solver."""
    ids = dist.ids if dist.ids is not None else tuple(range(len(dist.phi)))
    rows = []
    for pos, sid in enumerate(ids):
        shapley = "" if dist.shapley is None else format_value(dist.shapley.values[pos])
        rows.append([
            sid,
            format_value(dist.weights.sigma_hat[pos]),
            format_value(dist.weights.sigma[pos]),
            shapley,
            format_value(dist.phi[pos]),
        ])
    return csv_text(["id", "sigma_hat", "sigma", "shapley", "phi"], rows)


# =============================================================================
# POPULATIONS AND VISIT COUNTS
# =============================================================================


def population_text(strategies) -> str:
    strategies = list(strategies)
    if not strategies:
        return csv_text(["id", "birth_generation"], [])
    size = strategies[0].action_count
    header = ["id", "birth_generation"] + [f"p{a}" for a in range(size)]
    if strategies[0].response is not None:
        header += [f"r{r}_{a}" for r in range(size) for a in range(size)]
    rows = [[s.id, s.birth_generation] + [format_value(v) for v in s.parameters()] for s in strategies]
    return csv_text(header, rows)


def parse_population(text: str, path: str = "<population>") -> list:
    rows = _csv_rows(text, path)
    header, body = rows[0], rows[1:]
    if header[:2] != ["id", "birth_generation"]:
        raise SnapshotError(f"{path}: bad population header")
    size = sum(1 for column in header if column.startswith("p"))
    two_stage = any(column.startswith("r") for column in header)
    if two_stage and len(header) != 2 + size + size * size:
        raise SnapshotError(f"{path}: response columns do not form a {size}x{size} table")
    strategies = []
    for row in body:
        if len(row) != len(header):
            raise SnapshotError(f"{path}: truncated row {row[:1]}")
        try:
            params = np.array([float(v) for v in row[2:]])
            response = params[size:].reshape(size, size) if two_stage else None
            strategies.append(Strategy(int(row[0]), params[:size], response, int(row[1])))
        except ValueError as e:
            raise SnapshotError(f"{path}: {e}") from e
    return strategies


def visits_text(counts: dict) -> str:
    return csv_text(["id", "visits"], [[sid, int(v)] for sid, v in sorted(counts.items())])


def parse_visits(text: str, path: str = "<visits>") -> dict:
    rows = _csv_rows(text, path)
    if rows[0] != ["id", "visits"]:
        raise SnapshotError(f"{path}: bad visits header")
    try:
        return {int(sid): int(v) for sid, v in rows[1:]}
    except ValueError as e:
        raise SnapshotError(f"{path}: {e}") from e


# =============================================================================
# RUN DIRECTORY
# =============================================================================


class RunDirectory:
    """File layout of one engine run."""

    def __init__(self, root: str):
        self.root = root

    def path(self, *parts) -> str:
        return os.path.join(self.root, *parts)

    def population_path(self, generation) -> str:
        return self.path(POPULATION_DIR, f"gen_{generation}.csv")

    def visits_path(self, generation) -> str:
        return self.path(POPULATION_DIR, f"gen_{generation}.visits.csv")

    def payoff_path(self, generation) -> str:
        return self.path(PAYOFF_DIR, f"gen_{generation}.csv")

    def exists(self) -> bool:
        return os.path.exists(self.path(CHECKPOINT_FILE))

    # ---- config -------------------------------------------------------------

    def write_config(self, flat: dict):
        atomic_write_text(self.path(CONFIG_FILE), json.dumps(flat, sort_keys=True, indent=2) + "\n")

    def read_config(self) -> dict:
        try:
            return json.loads(_read_text(self.path(CONFIG_FILE)))
        except json.JSONDecodeError as e:
            raise SnapshotError(f"{CONFIG_FILE}: {e}") from e

    # ---- snapshots ----------------------------------------------------------

    def write_population(self, generation, strategies, counts=None):
        atomic_write_text(self.population_path(generation), population_text(strategies))
        if counts is not None:
            atomic_write_text(self.visits_path(generation), visits_text(counts))

    def read_population(self, generation) -> list:
        path = self.population_path(generation)
        return parse_population(_read_text(path), path)

    def read_visits(self, generation) -> dict:
        path = self.visits_path(generation)
        return parse_visits(_read_text(path), path)

    def write_payoff(self, generation, payoff: PayoffMatrix):
        write_payoff_csv(self.payoff_path(generation), payoff)

    def read_payoff(self, generation, ids=None) -> PayoffMatrix:
        return read_payoff_csv(self.payoff_path(generation), ids)

    def snapshot_generations(self) -> list:
        """Generations with a payoff snapshot, ascending."""
        directory = self.path(PAYOFF_DIR)
        if not os.path.isdir(directory):
            return []
        found = (_GEN_FILE.match(name) for name in os.listdir(directory))
        return sorted(int(m.group(1)) for m in found if m)

    # ---- trace --------------------------------------------------------------

    def append_trace(self, record: dict):
        os.makedirs(self.root, exist_ok=True)
        with open(self.path(TRACE_FILE), "a", encoding="utf-8") as f:
            f.write(json.dumps(record, sort_keys=True) + "\n")

    def truncate_trace(self, generations: int):
        """Keep the first `generations` records (drops records past a checkpoint)."""
        records = self.read_trace()[:generations] if os.path.exists(self.path(TRACE_FILE)) else []
        atomic_write_text(
            self.path(TRACE_FILE), "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)
        )

    def read_trace(self) -> list:
        records = []
        for number, line in enumerate(_read_text(self.path(TRACE_FILE)).splitlines(), start=1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise SnapshotError(f"{TRACE_FILE}:{number}: {e}") from e
        return records

    # ---- checkpoint ---------------------------------------------------------

    def write_checkpoint(self, meta: dict, strategies, counts: dict):
        """Population first, header last: the header commits the checkpoint."""
        atomic_write_text(self.population_path(CURRENT), population_text(strategies))
        atomic_write_text(self.visits_path(CURRENT), visits_text(counts))
        header = {"magic": MAGIC, "version": VERSION, **meta}
        atomic_write_text(self.path(CHECKPOINT_FILE), json.dumps(header, sort_keys=True, indent=2) + "\n")

    def read_checkpoint(self) -> tuple:
        """(meta, strategies, visit counts) of the last committed checkpoint."""
        try:
            meta = json.loads(_read_text(self.path(CHECKPOINT_FILE)))
        except json.JSONDecodeError as e:
            raise SnapshotError(f"{CHECKPOINT_FILE}: {e}") from e
        if meta.get("magic") != MAGIC or meta.get("version") != VERSION:
            raise SnapshotError(f"{CHECKPOINT_FILE}: protocol mismatch {meta.get('magic')}/{meta.get('version')}")
        return meta, self.read_population(CURRENT), self.read_visits(CURRENT)
