import pytest

from concord_config import (
    CONFIG_SCHEMA,
    PRESETS,
    defaults,
    describe_schema,
    env_from_config,
    flatten,
    load_config,
    oracle_from_config,
    parse_ratio,
)
from concord_env import TWO_STAGE
from concord_errors import ConfigError


def write_toml(tmp_path, text):
    path = tmp_path / "run.toml"
    path.write_text(text, encoding="utf-8")
    return str(path)


class TestSchema:
    def test_defaults_cover_schema(self):
        assert set(defaults()) == set(CONFIG_SCHEMA)

    def test_conventions_required(self):
        assert defaults()["env.conventions"] is None
        with pytest.raises(ConfigError) as info:
            load_config()
        assert info.value.key == "env.conventions"

    def test_every_preset_valid(self):
        for name in PRESETS:
            flat = load_config(preset=name)
            assert flat["env.kind"] == TWO_STAGE
            assert flat["env.conventions"] == [10.0, 8.0, 6.0]

    def test_describe_lists_every_key(self):
        text = describe_schema()
        for key in CONFIG_SCHEMA:
            assert key in text


class TestRatio:
    def test_parse(self):
        assert parse_ratio("1:3") == (1, 3)
        assert parse_ratio(" 2 : 2 ") == (2, 2)

    def test_rejects_garbage(self):
        with pytest.raises(ConfigError):
            parse_ratio("1/3")

    def test_rejects_zero_total(self):
        with pytest.raises(ConfigError):
            parse_ratio("0:0")

    def test_self_play_preset(self):
        cfg = oracle_from_config(load_config(preset="self-play"))
        assert (cfg.ratio_a, cfg.ratio_b) == (1, 0)


class TestLoadConfig:
    def test_file_values(self, tmp_path):
        path = write_toml(tmp_path, 'env.conventions = [5, 3]\nenv.kind = "one-shot"\noracle.k = 2\n')
        flat = load_config(path)
        assert flat["env.conventions"] == [5.0, 3.0]
        assert flat["oracle.k"] == 2
        assert env_from_config(flat).action_count == 2

    def test_nested_tables_flatten(self, tmp_path):
        path = write_toml(tmp_path, "[env]\nconventions = [4, 2]\n[engine]\nseed = 9\n")
        assert load_config(path)["engine.seed"] == 9

    def test_precedence(self, tmp_path):
        path = write_toml(tmp_path, 'preset = "cole-sv"\nengine.seed = 4\nsolver.flag = "R"\n')
        flat = load_config(path, overrides={"engine.seed": 11, "oracle.k": None})
        assert flat["engine.seed"] == 11
        assert flat["solver.flag"] == "R"
        assert flat["engine.pop_cap"] == 40
        assert flat["oracle.k"] == 3

    def test_flag_case_insensitive(self):
        assert load_config(preset="cole-sv", overrides={"solver.flag": "r"})["solver.flag"] == "R"

    def test_unknown_key(self, tmp_path):
        path = write_toml(tmp_path, "env.conventions = [1]\noracle.gamma = 2\n")
        with pytest.raises(ConfigError) as info:
            load_config(path)
        assert info.value.key == "oracle.gamma"

    def test_type_mismatch(self):
        with pytest.raises(ConfigError):
            load_config(preset="cole-sv", overrides={"oracle.k": "three"})

    def test_range_check(self):
        with pytest.raises(ConfigError):
            load_config(preset="cole-sv", overrides={"oracle.k": 0})

    def test_evict_window_bounded_by_cap(self):
        with pytest.raises(ConfigError) as info:
            load_config(preset="cole-sv", overrides={"engine.evict_window": 41})
        assert info.value.key == "engine.evict_window"

    def test_initial_kind_choices(self):
        flat = load_config(preset="cole-sv")
        assert flat["engine.initial_kind"] == "memoryless"
        assert flat["engine.initial_size"] == 9
        with pytest.raises(ConfigError) as info:
            load_config(preset="cole-sv", overrides={"engine.initial_kind": "league"})
        assert info.value.key == "engine.initial_kind"

    def test_concentration_must_be_positive(self):
        with pytest.raises(ConfigError):
            load_config(preset="cole-sv", overrides={"engine.initial_concentration": 0.0})

    def test_off_payoff_must_stay_below_conventions(self):
        with pytest.raises(ConfigError):
            load_config(preset="cole-sv", overrides={"env.off_payoff": 6.0})

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            load_config(preset="league")

    def test_malformed_toml(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(write_toml(tmp_path, "env.conventions = [10,\n"))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(str(tmp_path / "absent.toml"))

    def test_flatten(self):
        assert flatten({"a": {"b": 1, "c": {"d": [2]}}, "e": 3}) == {"a.b": 1, "a.c.d": [2], "e": 3}
