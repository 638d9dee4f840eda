"""
Concord Configuration

Central configuration for every Concord run.
Edit the defaults below, or override them per run with a flat-keyed TOML file:

    preset = "cole-sv"
    env.conventions = [10, 8, 6]
    oracle.ratio = "1:3"
    engine.seed = 7

Precedence: command-line flag > config file > preset > default.
"""

import re
import tomllib

from concord_env import GAME_KINDS, INITIAL_KINDS, TWO_STAGE, StageGame, make_convention_game
from concord_errors import ConfigError, InvalidInputError
from concord_oracle import OracleConfig
from concord_sampler import DEFAULT_EXPLORATION
from concord_solvers import SOLVER_FLAGS, WPG_DAMPING

# =============================================================================
# ENVIRONMENT SETTINGS
# =============================================================================

# Convention game played by every strategy pair
# Two-stage games let a strategy adapt to the partner's first move
ENV_KIND = TWO_STAGE
ENV_OFF_PAYOFF = 0.0

# Evaluation noise; 0 = exact enumeration
ENV_NOISE_STD = 0.0
ENV_EPISODES = 64

# =============================================================================
# ORACLE SETTINGS
# =============================================================================

# Weight of the self-play term
ORACLE_ALPHA = 1.0

# individual:cooperative draws per ascent round
ORACLE_RATIO = "1:3"

# Ascent rounds per generation, gradient steps per round
ORACLE_INNER_UPDATES = 10
ORACLE_STEPS_PER_UPDATE = 20
ORACLE_STEP_SIZE = 0.05

# A new strategy must rank within the k most preferred
ORACLE_K = 3
ORACLE_MAX_RESTARTS = 3

# =============================================================================
# SOLVER / SAMPLER SETTINGS
# =============================================================================

SOLVER_FLAG = "SV"

# Monte Carlo permutations; 0 = max(1000, 200·n)
SOLVER_SAMPLES = 0

SAMPLER_EXPLORATION = DEFAULT_EXPLORATION

# =============================================================================
# ENGINE SETTINGS
# =============================================================================

ENGINE_GENERATIONS = 60
ENGINE_POP_CAP = 50

# Eviction picks uniformly among this many oldest strategies
ENGINE_EVICT_WINDOW = 10

ENGINE_SEED = 0

# N₀: one uniform strategy, or `initial_size` random or memoryless ones
ENGINE_INITIAL_SIZE = 1
ENGINE_INITIAL_KIND = "uniform"

# Dirichlet concentration of random N₀ draws; small values give near-pure openers
ENGINE_INITIAL_CONCENTRATION = 1.0

LOG_LEVEL = "INFO"

# =============================================================================
# SCHEMA
# =============================================================================

# flat key -> (default, min, max, type, description); default None = required
CONFIG_SCHEMA = {
    "env.kind": (ENV_KIND, None, None, str, "stage game: one-shot | two-stage"),
    "env.conventions": (None, None, None, list, "convention payoffs U(a,a), all > off_payoff"),
    "env.off_payoff": (ENV_OFF_PAYOFF, None, None, float, "payoff of mismatched actions"),
    "env.noise_std": (ENV_NOISE_STD, 0.0, None, float, "Gaussian evaluation noise (0 = exact)"),
    "env.episodes": (ENV_EPISODES, 1, 100000, int, "rollouts per role when noisy"),
    "oracle.alpha": (ORACLE_ALPHA, 0.0, None, float, "self-play weight"),
    "oracle.ratio": (ORACLE_RATIO, None, None, str, "individual:cooperative draws, e.g. 1:3"),
    "oracle.inner_updates": (ORACLE_INNER_UPDATES, 1, 10000, int, "ascent rounds per generation"),
    "oracle.steps_per_update": (ORACLE_STEPS_PER_UPDATE, 1, 10000, int, "gradient steps per round"),
    "oracle.step_size": (ORACLE_STEP_SIZE, 0.0, None, float, "projected-gradient step size"),
    "oracle.k": (ORACLE_K, 1, None, int, "preference rank threshold"),
    "oracle.max_restarts": (ORACLE_MAX_RESTARTS, 0, 100, int, "perturbed restarts on rank failure"),
    "oracle.exact_best_response": (False, None, None, bool, "vertex best response (one-shot, no self term)"),
    "solver.flag": (SOLVER_FLAG, None, None, str, "incompatibility solver: SV | R"),
    "solver.samples": (SOLVER_SAMPLES, 0, None, int, "Shapley permutations (0 = max(1000, 200n))"),
    "solver.damping": (WPG_DAMPING, 0.0, 1.0, float, "weighted PageRank damping"),
    "sampler.c": (SAMPLER_EXPLORATION, 0.0, None, float, "SUCG exploration constant"),
    "engine.generations": (ENGINE_GENERATIONS, 0, None, int, "generations to run"),
    "engine.pop_cap": (ENGINE_POP_CAP, 1, None, int, "population size cap"),
    "engine.evict_window": (ENGINE_EVICT_WINDOW, 1, None, int, "oldest strategies eligible for eviction"),
    "engine.seed": (ENGINE_SEED, None, None, int, "master seed"),
    "engine.initial_size": (ENGINE_INITIAL_SIZE, 1, None, int, "strategies in the initial population"),
    "engine.initial_kind": (ENGINE_INITIAL_KIND, None, None, str, "initial strategies: uniform | random | memoryless"),
    "engine.initial_concentration": (ENGINE_INITIAL_CONCENTRATION, 0.001, None, float, "Dirichlet concentration of N₀ draws"),
    "log.level": (LOG_LEVEL, None, None, str, "DEBUG | INFO | WARNING"),
}

CONFIG_CHOICES = {
    "env.kind": GAME_KINDS,
    "solver.flag": SOLVER_FLAGS,
    "engine.initial_kind": INITIAL_KINDS,
    "log.level": ("DEBUG", "INFO", "WARNING", "ERROR"),
}

_RATIO = re.compile(r"^\s*(\d+)\s*:\s*(\d+)\s*$")

# Convention-game run used for the cross-play experiments
_CONVENTION_RUN = {
    "env.kind": TWO_STAGE,
    "env.conventions": [10, 8, 6],
    "env.off_payoff": 0.0,
    "oracle.alpha": 1.0,
    "oracle.ratio": "1:3",
    "oracle.k": 3,
    "oracle.step_size": 0.01,
    "oracle.max_restarts": 10,
    "engine.pop_cap": 40,
    "engine.generations": 30,
    # Near-pure memoryless openers hold the conventions; the cap keeps them for the whole run
    "engine.initial_kind": "memoryless",
    "engine.initial_size": 9,
    "engine.initial_concentration": 0.3,
}

# Presets: name -> {flat key: value}
PRESETS = {
    "cole-sv": {**_CONVENTION_RUN, "solver.flag": "SV"},
    "cole-r": {**_CONVENTION_RUN, "solver.flag": "R"},
    "self-play": {**_CONVENTION_RUN, "oracle.ratio": "1:0"},
    "ratio-0:4": {**_CONVENTION_RUN, "oracle.ratio": "0:4"},
    "ratio-1:3": {**_CONVENTION_RUN, "oracle.ratio": "1:3"},
    "ratio-2:2": {**_CONVENTION_RUN, "oracle.ratio": "2:2"},
    "ratio-3:1": {**_CONVENTION_RUN, "oracle.ratio": "3:1"},
}


def defaults() -> dict:
    return {key: entry[0] for key, entry in CONFIG_SCHEMA.items()}


def flatten(tree: dict, prefix: str = "") -> dict:
    """Nested TOML tables -> dotted keys. Lists stay values."""
    flat = {}
    for key, value in tree.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(flatten(value, f"{dotted}."))
        else:
            flat[dotted] = value
    return flat


def parse_ratio(text: str) -> tuple:
    match = _RATIO.match(str(text))
    if not match:
        raise ConfigError("oracle.ratio", f"expected 'a:b', got {text!r}")
    a, b = int(match.group(1)), int(match.group(2))
    if a + b < 1:
        raise ConfigError("oracle.ratio", "a + b must be at least 1")
    return a, b


def _coerce(key: str, value):
    default, min_val, max_val, kind, _ = CONFIG_SCHEMA[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if kind is bool and not isinstance(value, bool):
        raise ConfigError(key, f"expected true/false, got {value!r}")
    if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise ConfigError(key, f"expected an integer, got {value!r}")
    if not isinstance(value, kind):
        raise ConfigError(key, f"expected {kind.__name__}, got {type(value).__name__}")
    if min_val is not None and value < min_val:
        raise ConfigError(key, f"{value} is below the minimum {min_val}")
    if max_val is not None and value > max_val:
        raise ConfigError(key, f"{value} is above the maximum {max_val}")
    if key in CONFIG_CHOICES:
        value = value.upper() if key in ("solver.flag", "log.level") else value
        if value not in CONFIG_CHOICES[key]:
            raise ConfigError(key, f"{value!r} is not one of {CONFIG_CHOICES[key]}")
    return value


def validate(flat: dict) -> dict:
    """Type/range-check a flat mapping; returns the coerced copy."""
    resolved = {}
    for key, value in flat.items():
        if key not in CONFIG_SCHEMA:
            raise ConfigError(key, "unknown configuration key")
        resolved[key] = value if value is None else _coerce(key, value)

    conventions = resolved.get("env.conventions")
    if conventions is None:
        raise ConfigError("env.conventions", "required key is missing")
    if not conventions or not all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in conventions):
        raise ConfigError("env.conventions", "expected a non-empty list of numbers")
    if any(c <= 0 for c in conventions):
        raise ConfigError("env.conventions", "convention payoffs must be positive")
    resolved["env.conventions"] = [float(c) for c in conventions]
    parse_ratio(resolved["oracle.ratio"])
    if resolved["engine.evict_window"] > resolved["engine.pop_cap"]:
        raise ConfigError("engine.evict_window", "must not exceed engine.pop_cap")
    if resolved["engine.initial_size"] > resolved["engine.pop_cap"]:
        raise ConfigError("engine.initial_size", "must not exceed engine.pop_cap")
    if not 0.0 < resolved["solver.damping"] < 1.0:
        raise ConfigError("solver.damping", "must lie strictly between 0 and 1")
    try:
        env_from_config(resolved)
    except InvalidInputError as e:
        raise ConfigError("env.off_payoff", str(e)) from e
    return resolved


def load_config(path: str | None = None, overrides: dict | None = None, preset: str | None = None) -> dict:
    """Resolve defaults, preset, file and overrides into one validated flat mapping."""
    file_values = {}
    if path is not None:
        try:
            with open(path, "rb") as f:
                file_values = flatten(tomllib.load(f))
        except OSError as e:
            raise ConfigError("config", f"cannot read {path}: {e}") from e
        except tomllib.TOMLDecodeError as e:
            raise ConfigError("config", f"{path}: {e}") from e

    preset = file_values.pop("preset", None) if preset is None else preset
    file_values.pop("preset", None)
    flat = defaults()
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError("preset", f"unknown preset {preset!r}, expected one of {sorted(PRESETS)}")
        flat.update(PRESETS[preset])
    flat.update(file_values)
    flat.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return validate(flat)


# =============================================================================
# TYPED VIEWS
# =============================================================================


def env_from_config(flat: dict) -> StageGame:
    return make_convention_game(
        flat["env.conventions"],
        flat["env.off_payoff"],
        flat["env.kind"],
        flat["env.noise_std"],
        flat["env.episodes"],
    )


def oracle_from_config(flat: dict) -> OracleConfig:
    ratio_a, ratio_b = parse_ratio(flat["oracle.ratio"])
    return OracleConfig(
        alpha=flat["oracle.alpha"],
        ratio_a=ratio_a,
        ratio_b=ratio_b,
        inner_updates=flat["oracle.inner_updates"],
        steps_per_update=flat["oracle.steps_per_update"],
        step_size=flat["oracle.step_size"],
        k=flat["oracle.k"],
        max_restarts=flat["oracle.max_restarts"],
        exploration=flat["sampler.c"],
        exact_best_response=flat["oracle.exact_best_response"],
    )


def describe_schema() -> str:
    """One line per key with its default, for --help."""
    lines = []
    for key, (default, _, _, _, description) in CONFIG_SCHEMA.items():
        shown = "(required)" if default is None else repr(default)
        lines.append(f"  {key:<28} {shown:<12} {description}")
    return "\n".join(lines)
