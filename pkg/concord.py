#!/usr/bin/env python3
"""
Concord command line

    concord.py run --preset cole-sv --seed 3 --out runs/cole-sv-3
    concord.py run --resume runs/cole-sv-3
    concord.py analyze runs/cole-sv-3
    concord.py solve payoff.csv --flag r
    concord.py crossplay runs/cole-sv-3/population/gen_30.csv --probes stubborn --preset cole-sv

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from concord_analysis import RunAnalysis, crossplay, crossplay_text, stubborn_probes
from concord_config import PRESETS, describe_schema, env_from_config, load_config
from concord_engine import EngineConfig, run
from concord_errors import ConcordError, ConfigError, InvalidInputError, SnapshotError
from concord_io import RunDirectory, atomic_write_text, parse_population, read_payoff_csv, solver_text
from concord_solvers import solve

logger = logging.getLogger("concord.cli")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


def setup_logging(level: str = "INFO", verbose: bool = False, quiet: bool = False):
    """Tagged console lines on stderr for every concord.* logger."""
    if verbose:
        level = "DEBUG"
    elif quiet:
        level = "WARNING"
    root = logging.getLogger("concord")
    root.setLevel(getattr(logging, level.upper()))
    for handler in list(root.handlers):
        root.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("[%(name)s] %(message)s"))
    root.addHandler(handler)


def _emit(text: str, out: str | None):
    if out:
        atomic_write_text(out, text)
    else:
        sys.stdout.write(text)


def _overrides(args) -> dict:
    return {
        "engine.seed": getattr(args, "seed", None),
        "solver.flag": getattr(args, "flag", None),
        "oracle.k": getattr(args, "k", None),
    }


# =============================================================================
# SUBCOMMANDS
# =============================================================================


def cmd_run(args) -> int:
    if args.resume:
        run_dir = RunDirectory(args.resume)
        flat = run_dir.read_config()
        setup_logging(flat.get("log.level", "INFO"), args.verbose, args.quiet)
        cfg = EngineConfig.from_flat(flat)
        trace = run(cfg, run_dir, flat, resume=True)
    else:
        flat = load_config(args.config, _overrides(args), args.preset)
        setup_logging(flat["log.level"], args.verbose, args.quiet)
        cfg = EngineConfig.from_flat(flat)
        out = args.out or os.path.join("runs", f"{args.preset or 'concord'}-seed{flat['engine.seed']}")
        run_dir = RunDirectory(out)
        logger.info("run directory: %s", out)
        trace = run(cfg, run_dir, flat)

    satisfied = sum(1 for r in trace.records if r.rank_satisfied)
    logger.info("completed %d generations (%d rank-satisfied)", len(trace.records), satisfied)
    return EXIT_OK


def cmd_analyze(args) -> int:
    if not os.path.isdir(args.run_dir):
        raise InvalidInputError(f"no run directory at {args.run_dir}")
    analysis = RunAnalysis(args.run_dir)
    out = args.out or os.path.join(args.run_dir, "analysis")
    analysis.write_reports(out, args.k)
    print(json.dumps({k: v for k, v in analysis.summary(args.k).items() if k != "convergence"}, sort_keys=True))
    if analysis.too_many_skipped:
        logger.error("%.0f%% of snapshots unreadable", 100 * analysis.skipped_fraction)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_solve(args) -> int:
    payoff = read_payoff_csv(args.payoff_csv)
    if payoff.n < 2:
        raise InvalidInputError("solve needs at least two strategies")
    rng = np.random.default_rng(args.seed)
    dist = solve(payoff, args.flag, rng, args.samples)
    _emit(solver_text(dist), args.out)
    return EXIT_OK


def _read_strategies(path: str) -> list:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return parse_population(f.read(), path)
    except OSError as e:
        raise InvalidInputError(f"cannot read {path}: {e}") from e


def cmd_crossplay(args) -> int:
    flat = load_config(args.config, preset=args.preset)
    game = env_from_config(flat)
    population = _read_strategies(args.population)
    probes = stubborn_probes(game) if args.probes == "stubborn" else _read_strategies(args.probes)
    report = crossplay(population, probes, game, flat["engine.seed"])
    _emit(crossplay_text(report), args.out)
    return EXIT_OK


# =============================================================================
# ARGUMENT PARSING
# =============================================================================


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="concord.py",
        description="Cooperative open-ended population training on convention games",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser(
        "run",
        help="Run the generation loop",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="Configuration keys (flat TOML) and defaults:\n"
        + describe_schema()
        + f"\n\nPresets: {', '.join(PRESETS)}",
    )
    run_p.add_argument("--config", help="Flat-keyed TOML config file")
    run_p.add_argument("--preset", choices=sorted(PRESETS), help="Start from a named preset")
    run_p.add_argument("--seed", type=int, help="Master seed (overrides engine.seed)")
    run_p.add_argument("--flag", type=str.upper, choices=["SV", "R"], help="Incompatibility solver")
    run_p.add_argument("--k", type=int, help="Preference rank threshold (overrides oracle.k)")
    run_p.add_argument("--out", help="Run directory (default runs/<preset>-seed<seed>)")
    run_p.add_argument("--resume", metavar="RUN_DIR", help="Continue a run from its checkpoint")
    run_p.set_defaults(handler=cmd_run)

    analyze_p = sub.add_parser("analyze", help="Centrality matrices, series and verdict of a run")
    analyze_p.add_argument("run_dir")
    analyze_p.add_argument("--k", type=int, help="Rank threshold (default: the run's oracle.k)")
    analyze_p.add_argument("--out", help="Report directory (default <run_dir>/analysis)")
    analyze_p.set_defaults(handler=cmd_analyze)

    solve_p = sub.add_parser("solve", help="Incompatibility distribution of a payoff CSV")
    solve_p.add_argument("payoff_csv")
    solve_p.add_argument("--flag", type=str.upper, choices=["SV", "R"], default="SV")
    solve_p.add_argument("--seed", type=int, default=0)
    solve_p.add_argument("--samples", type=int, help="Shapley permutations (default max(1000, 200n))")
    solve_p.add_argument("--out", help="Output CSV (default stdout)")
    solve_p.set_defaults(handler=cmd_solve)

    cross_p = sub.add_parser("crossplay", help="Evaluate a population against probe strategies")
    cross_p.add_argument("population", help="Population CSV (e.g. population/gen_<t>.csv)")
    cross_p.add_argument("--probes", default="stubborn", help="Probe population CSV, or 'stubborn'")
    cross_p.add_argument("--config", help="Config file describing the environment")
    cross_p.add_argument("--preset", choices=sorted(PRESETS))
    cross_p.add_argument("--out", help="Output CSV (default stdout)")
    cross_p.set_defaults(handler=cmd_crossplay)

    for p in (run_p, analyze_p, solve_p, cross_p):
        p.add_argument("--verbose", action="store_true", help="Debug logging")
        p.add_argument("--quiet", action="store_true", help="Warnings and errors only")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    setup_logging(verbose=args.verbose, quiet=args.quiet)

    try:
        return args.handler(args)
    except ConfigError as e:
        logger.error("config error: %s", e)
        return EXIT_USAGE
    except (InvalidInputError, SnapshotError) as e:
        if args.command == "run":
            logger.error("run failed: %s", e)
            return EXIT_RUNTIME
        logger.error("%s", e)
        return EXIT_USAGE
    except ConcordError as e:
        logger.error("run failed: %s", e)
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        logger.error("interrupted")
        return EXIT_RUNTIME
    except OSError as e:
        logger.error("%s failed: %s", args.command, e)
        return EXIT_RUNTIME
    except Exception as e:
        logger.error("%s failed unexpectedly: %s: %s", args.command, type(e).__name__, e)
        logger.debug("traceback", exc_info=True)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
