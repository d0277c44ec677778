"""Tests for the INI run configuration."""

from __future__ import annotations

from dataclasses import fields
from pathlib import Path

import pytest
import voluptuous as vol

from deep_embedding_forest.config import boolean, int_list, load_config, read_ini, validate_config
from deep_embedding_forest.const import DEFAULT_DENSE_WIDTHS, DEFAULT_SEED
from deep_embedding_forest.errors import ConfigError
from deep_embedding_forest.fuzzy import FuzzyConfig
from deep_embedding_forest.gbdt import GbdtConfig
from deep_embedding_forest.nn import TrainConfig
from deep_embedding_forest.serve import BenchConfig

RUN_INI = """\
[run]
seed = 11
deterministic = no

[nn]
residual_hidden = 8, 4
learning_rate = 0

[gbdt]
n_trees = 7
lambda = 0.5

[bench]
dense_widths = 16,1
"""


@pytest.fixture
def ini_file(tmp_path: Path) -> Path:
    path = tmp_path / "run.ini"
    path.write_text(RUN_INI, encoding="utf-8")
    return path


# ── Validators ────────────────────────────────────────────────────────


class TestBoolean:
    """Tests for boolean."""

    @pytest.mark.parametrize("text", ["1", "true", "Yes", " ON "])
    def test_true(self, text: str) -> None:
        assert boolean(text) is True

    @pytest.mark.parametrize("text", ["0", "False", "no", "off"])
    def test_false(self, text: str) -> None:
        assert boolean(text) is False

    def test_passthrough(self) -> None:
        assert boolean(False) is False

    def test_invalid(self) -> None:
        with pytest.raises(vol.Invalid):
            boolean("maybe")


class TestIntList:
    """Tests for int_list."""

    def test_comma_separated(self) -> None:
        assert int_list("128, 64") == (128, 64)

    def test_sequence(self) -> None:
        assert int_list([3]) == (3,)

    def test_empty_string(self) -> None:
        assert int_list("") == ()

    def test_non_positive(self) -> None:
        with pytest.raises(vol.Invalid):
            int_list("4,0")

    def test_not_integers(self) -> None:
        with pytest.raises(vol.Invalid):
            int_list("4,x")


# ── Loading ───────────────────────────────────────────────────────────


class TestLoadConfig:
    """Tests for load_config / validate_config."""

    def test_defaults(self) -> None:
        config = load_config()
        assert config.seed == DEFAULT_SEED
        assert config.out == Path("out")
        assert config.deterministic is True
        assert config.gbdt_config() == GbdtConfig()
        assert config.train_config() == TrainConfig(seed=DEFAULT_SEED)
        assert config.fuzzy_config() == FuzzyConfig(seed=DEFAULT_SEED)
        assert config.bench_config() == BenchConfig()
        assert tuple(config.section("bench")["dense_widths"]) == DEFAULT_DENSE_WIDTHS

    def test_reads_ini(self, ini_file: Path) -> None:
        config = load_config(ini_file)
        assert config.seed == 11
        assert config.deterministic is False
        assert config.train_config().residual_hidden == (8, 4)
        assert config.train_config().learning_rate == 0.0
        gbdt = config.gbdt_config()
        assert gbdt.n_trees == 7
        assert gbdt.lambda_ == 0.5
        assert config.section("bench")["dense_widths"] == (16, 1)

    def test_overrides_win_and_none_is_ignored(self, ini_file: Path) -> None:
        config = load_config(ini_file, {"run": {"seed": 3}, "gbdt": {"n_trees": None}})
        assert config.seed == 3
        assert config.gbdt_config().n_trees == 7

    def test_gbdt_config_ignores_run_seed(self) -> None:
        seeded = load_config(overrides={"run": {"seed": 99}})
        assert seeded.gbdt_config() == load_config().gbdt_config()
        assert "seed" not in {f.name for f in fields(GbdtConfig)}

    def test_synth_config(self) -> None:
        config = load_config(overrides={"synth": {"n_samples": "50", "noise": "0"}})
        synth = config.synth_config()
        assert synth.n_samples == 50
        assert synth.noise == 0.0
        assert synth.seed == DEFAULT_SEED
        assert config.synth_config(n_samples=5, seed=1).n_samples == 5

    def test_invalid_value_names_the_key(self) -> None:
        with pytest.raises(ConfigError, match="invalid value for gbdt.max_leaves"):
            load_config(overrides={"gbdt": {"max_leaves": 1}})

    def test_unknown_key(self) -> None:
        with pytest.raises(ConfigError, match="gbdt.bogus"):
            validate_config({"gbdt": {"bogus": "1"}})

    def test_unknown_section(self) -> None:
        with pytest.raises(ConfigError):
            validate_config({"extras": {}})

    def test_missing_data_file(self, tmp_path: Path) -> None:
        with pytest.raises(ConfigError, match="data.schema"):
            validate_config({"data": {"schema": str(tmp_path / "absent.txt")}})

    def test_missing_config_file(self, tmp_path: Path) -> None:
        with pytest.raises(ConfigError, match="cannot read config file"):
            load_config(tmp_path / "absent.ini")

    def test_unreadable_ini(self) -> None:
        with pytest.raises(ConfigError, match="unreadable config file"):
            read_ini("seed = 1\n")


class TestDigest:
    """Tests for RunConfig.digest."""

    def test_ignores_output_directory(self) -> None:
        first = load_config(overrides={"run": {"out": "a"}})
        second = load_config(overrides={"run": {"out": "b"}})
        assert first.digest() == second.digest()

    def test_changes_with_settings(self) -> None:
        assert load_config().digest() != load_config(overrides={"run": {"seed": 8}}).digest()

    def test_string_and_typed_values_agree(self) -> None:
        assert (
            load_config(overrides={"gbdt": {"n_trees": "5"}}).digest()
            == load_config(overrides={"gbdt": {"n_trees": 5}}).digest()
        )
