"""Run configuration: INI sections validated by voluptuous schemas."""

from __future__ import annotations

import configparser
import json
import logging
from collections.abc import Mapping
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import voluptuous as vol

from .common import sha256_bytes
from .const import (
    CONF_ADAM_BETA1,
    CONF_ADAM_BETA2,
    CONF_ADAM_EPS,
    CONF_BASE_SCORE,
    CONF_BATCH_SIZE,
    CONF_DENSE_WIDTHS,
    CONF_DETERMINISTIC,
    CONF_EMBED_DIM,
    CONF_EPOCHS,
    CONF_INTERACTION_DEPTH,
    CONF_KAPPA,
    CONF_L2,
    CONF_LAMBDA,
    CONF_LEARNING_RATE,
    CONF_MAX_DEPTH,
    CONF_MAX_LEAVES,
    CONF_MIN_REPS,
    CONF_MIN_SAMPLES_LEAF,
    CONF_N_DENSE_DIMS,
    CONF_N_SAMPLES,
    CONF_N_SPARSE_DIMS,
    CONF_N_SPARSE_GROUPS,
    CONF_N_TEST,
    CONF_N_TREES,
    CONF_NOISE,
    CONF_OUT,
    CONF_REPS,
    CONF_RESIDUAL_HIDDEN,
    CONF_SCHEMA,
    CONF_SEED,
    CONF_SHUFFLE_SEED,
    CONF_TEST,
    CONF_TRAIN,
    CONF_WARMUP,
    DEFAULT_ADAM_BETA1,
    DEFAULT_ADAM_BETA2,
    DEFAULT_ADAM_EPS,
    DEFAULT_BATCH_SIZE,
    DEFAULT_BENCH_BATCH_SIZE,
    DEFAULT_DENSE_WIDTHS,
    DEFAULT_EMBED_DIM,
    DEFAULT_EPOCHS,
    DEFAULT_FUZZY_EPOCHS,
    DEFAULT_FUZZY_LEARNING_RATE,
    DEFAULT_GBDT_LEARNING_RATE,
    DEFAULT_INTERACTION_DEPTH,
    DEFAULT_KAPPA,
    DEFAULT_L2,
    DEFAULT_LAMBDA,
    DEFAULT_LEARNING_RATE,
    DEFAULT_MAX_DEPTH,
    DEFAULT_MAX_LEAVES,
    DEFAULT_MIN_REPS,
    DEFAULT_MIN_SAMPLES_LEAF,
    DEFAULT_N_DENSE_DIMS,
    DEFAULT_N_SAMPLES,
    DEFAULT_N_SPARSE_DIMS,
    DEFAULT_N_SPARSE_GROUPS,
    DEFAULT_N_TEST,
    DEFAULT_N_TREES,
    DEFAULT_NOISE,
    DEFAULT_REPS,
    DEFAULT_RESIDUAL_HIDDEN,
    DEFAULT_SEED,
    DEFAULT_WARMUP,
    SECTION_BENCH,
    SECTION_DATA,
    SECTION_FUZZY,
    SECTION_GBDT,
    SECTION_NN,
    SECTION_RUN,
    SECTION_SYNTH,
)
from .data import SynthConfig
from .errors import ConfigError
from .fuzzy import FuzzyConfig
from .gbdt import GbdtConfig
from .nn import TrainConfig
from .serve import BenchConfig

_LOGGER = logging.getLogger(__name__)

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def boolean(value: Any) -> bool:
    """Validate and coerce an INI-style boolean."""
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in _TRUE:
        return True
    if text in _FALSE:
        return False
    raise vol.Invalid(f"invalid boolean value {value!r}")


def int_list(value: Any) -> tuple[int, ...]:
    """Accept `128,64` or a sequence of ints; every width must be positive."""
    if isinstance(value, str):
        parts = [p for p in value.replace(" ", "").split(",") if p]
    else:
        parts = list(value)
    try:
        widths = tuple(int(p) for p in parts)
    except (TypeError, ValueError) as err:
        raise vol.Invalid(f"expected comma-separated integers, got {value!r}") from err
    if any(w < 1 for w in widths):
        raise vol.Invalid("widths must be positive")
    return widths


_POSITIVE_INT = vol.All(vol.Coerce(int), vol.Range(min=1))
_NON_NEGATIVE_INT = vol.All(vol.Coerce(int), vol.Range(min=0))
_POSITIVE_FLOAT = vol.All(vol.Coerce(float), vol.Range(min=0.0, min_included=False))
_NON_NEGATIVE_FLOAT = vol.All(vol.Coerce(float), vol.Range(min=0.0))
_UNIT_OPEN = vol.All(vol.Coerce(float), vol.Range(min=0.0, max=1.0, max_included=False))

RUN_SCHEMA = vol.Schema(
    {
        vol.Optional(CONF_SEED, default=DEFAULT_SEED): _NON_NEGATIVE_INT,
        vol.Optional(CONF_OUT, default="out"): vol.Coerce(str),
        vol.Optional(CONF_DETERMINISTIC, default=True): boolean,
    }
)

DATA_SCHEMA = vol.Schema(
    {
        vol.Optional(CONF_SCHEMA): vol.IsFile(),
        vol.Optional(CONF_TRAIN): vol.IsFile(),
        vol.Optional(CONF_TEST): vol.IsFile(),
    }
)

SYNTH_SCHEMA = vol.Schema(
    {
        vol.Optional(CONF_N_SAMPLES, default=DEFAULT_N_SAMPLES): _NON_NEGATIVE_INT,
        vol.Optional(CONF_N_TEST, default=DEFAULT_N_TEST): _NON_NEGATIVE_INT,
        vol.Optional(CONF_N_SPARSE_DIMS, default=DEFAULT_N_SPARSE_DIMS): _POSITIVE_INT,
        vol.Optional(CONF_N_DENSE_DIMS, default=DEFAULT_N_DENSE_DIMS): _POSITIVE_INT,
        vol.Optional(CONF_N_SPARSE_GROUPS, default=DEFAULT_N_SPARSE_GROUPS): _POSITIVE_INT,
        vol.Optional(CONF_INTERACTION_DEPTH, default=DEFAULT_INTERACTION_DEPTH): _POSITIVE_INT,
        vol.Optional(CONF_NOISE, default=DEFAULT_NOISE): vol.All(
            vol.Coerce(float), vol.Range(min=0.0, max=0.5)
        ),
    }
)

NN_SCHEMA = vol.Schema(
    {
        vol.Optional(CONF_EPOCHS, default=DEFAULT_EPOCHS): _POSITIVE_INT,
        vol.Optional(CONF_BATCH_SIZE, default=DEFAULT_BATCH_SIZE): _POSITIVE_INT,
        vol.Optional(CONF_LEARNING_RATE, default=DEFAULT_LEARNING_RATE): _NON_NEGATIVE_FLOAT,
        vol.Optional(CONF_ADAM_BETA1, default=DEFAULT_ADAM_BETA1): _UNIT_OPEN,
        vol.Optional(CONF_ADAM_BETA2, default=DEFAULT_ADAM_BETA2): _UNIT_OPEN,
        vol.Optional(CONF_ADAM_EPS, default=DEFAULT_ADAM_EPS): _POSITIVE_FLOAT,
        vol.Optional(CONF_L2, default=DEFAULT_L2): _NON_NEGATIVE_FLOAT,
        vol.Optional(CONF_EMBED_DIM, default=DEFAULT_EMBED_DIM): _POSITIVE_INT,
        vol.Optional(CONF_RESIDUAL_HIDDEN, default=DEFAULT_RESIDUAL_HIDDEN): int_list,
    }
)

GBDT_SCHEMA = vol.Schema(
    {
        vol.Optional(CONF_N_TREES, default=DEFAULT_N_TREES): _POSITIVE_INT,
        vol.Optional(CONF_MAX_LEAVES, default=DEFAULT_MAX_LEAVES): vol.All(
            vol.Coerce(int), vol.Range(min=2)
        ),
        vol.Optional(CONF_MAX_DEPTH, default=DEFAULT_MAX_DEPTH): _POSITIVE_INT,
        vol.Optional(CONF_MIN_SAMPLES_LEAF, default=DEFAULT_MIN_SAMPLES_LEAF): _POSITIVE_INT,
        vol.Optional(CONF_LAMBDA, default=DEFAULT_LAMBDA): _NON_NEGATIVE_FLOAT,
        vol.Optional(CONF_LEARNING_RATE, default=DEFAULT_GBDT_LEARNING_RATE): _POSITIVE_FLOAT,
        vol.Optional(CONF_BASE_SCORE): vol.Coerce(float),
    }
)

FUZZY_SCHEMA = vol.Schema(
    {
        vol.Optional(CONF_KAPPA, default=DEFAULT_KAPPA): _POSITIVE_FLOAT,
        vol.Optional(CONF_EPOCHS, default=DEFAULT_FUZZY_EPOCHS): _POSITIVE_INT,
        vol.Optional(CONF_BATCH_SIZE, default=DEFAULT_BATCH_SIZE): _POSITIVE_INT,
        vol.Optional(CONF_LEARNING_RATE, default=DEFAULT_FUZZY_LEARNING_RATE): _NON_NEGATIVE_FLOAT,
        vol.Optional(CONF_ADAM_BETA1, default=DEFAULT_ADAM_BETA1): _UNIT_OPEN,
        vol.Optional(CONF_ADAM_BETA2, default=DEFAULT_ADAM_BETA2): _UNIT_OPEN,
        vol.Optional(CONF_ADAM_EPS, default=DEFAULT_ADAM_EPS): _POSITIVE_FLOAT,
        vol.Optional(CONF_L2, default=DEFAULT_L2): _NON_NEGATIVE_FLOAT,
    }
)

BENCH_SCHEMA = vol.Schema(
    {
        vol.Optional(CONF_WARMUP, default=DEFAULT_WARMUP): _POSITIVE_INT,
        vol.Optional(CONF_REPS, default=DEFAULT_REPS): _POSITIVE_INT,
        vol.Optional(CONF_SHUFFLE_SEED, default=DEFAULT_SEED): _NON_NEGATIVE_INT,
        vol.Optional(CONF_BATCH_SIZE, default=DEFAULT_BENCH_BATCH_SIZE): _POSITIVE_INT,
        vol.Optional(CONF_MIN_REPS, default=DEFAULT_MIN_REPS): _POSITIVE_INT,
        vol.Optional(CONF_DENSE_WIDTHS, default=DEFAULT_DENSE_WIDTHS): int_list,
    }
)

CONFIG_SCHEMA = vol.Schema(
    {
        vol.Optional(SECTION_RUN, default={}): RUN_SCHEMA,
        vol.Optional(SECTION_DATA, default={}): DATA_SCHEMA,
        vol.Optional(SECTION_SYNTH, default={}): SYNTH_SCHEMA,
        vol.Optional(SECTION_NN, default={}): NN_SCHEMA,
        vol.Optional(SECTION_GBDT, default={}): GBDT_SCHEMA,
        vol.Optional(SECTION_FUZZY, default={}): FUZZY_SCHEMA,
        vol.Optional(SECTION_BENCH, default={}): BENCH_SCHEMA,
    }
)


@dataclass(frozen=True)
class RunConfig:
    """Validated sections with every default filled in."""

    sections: Mapping[str, Mapping[str, Any]]

    def section(self, name: str) -> Mapping[str, Any]:
        return self.sections[name]

    @property
    def seed(self) -> int:
        return self.sections[SECTION_RUN][CONF_SEED]

    @property
    def out(self) -> Path:
        return Path(self.sections[SECTION_RUN][CONF_OUT])

    @property
    def deterministic(self) -> bool:
        return self.sections[SECTION_RUN][CONF_DETERMINISTIC]

    def train_config(self) -> TrainConfig:
        return TrainConfig.from_mapping(self.sections[SECTION_NN], self.seed)

    def gbdt_config(self) -> GbdtConfig:
        return GbdtConfig.from_mapping(self.sections[SECTION_GBDT])

    def fuzzy_config(self) -> FuzzyConfig:
        return FuzzyConfig.from_mapping(self.sections[SECTION_FUZZY], self.seed)

    def bench_config(self) -> BenchConfig:
        return BenchConfig.from_mapping(self.sections[SECTION_BENCH])

    def synth_config(self, n_samples: int | None = None, seed: int | None = None) -> SynthConfig:
        synth = self.sections[SECTION_SYNTH]
        return SynthConfig(
            n_samples=synth[CONF_N_SAMPLES] if n_samples is None else n_samples,
            n_sparse_dims=synth[CONF_N_SPARSE_DIMS],
            n_dense_dims=synth[CONF_N_DENSE_DIMS],
            interaction_depth=synth[CONF_INTERACTION_DEPTH],
            noise=synth[CONF_NOISE],
            seed=self.seed if seed is None else seed,
            n_sparse_groups=synth[CONF_N_SPARSE_GROUPS],
        )

    def as_dict(self) -> dict[str, dict[str, Any]]:
        """JSON-ready copy (tuples become lists)."""
        return json.loads(json.dumps({k: dict(v) for k, v in self.sections.items()}))

    def digest(self) -> str:
        """sha256 of every setting except the output directory."""
        settings = self.as_dict()
        settings[SECTION_RUN].pop(CONF_OUT, None)
        return sha256_bytes(json.dumps(settings, sort_keys=True).encode("utf-8"))


def read_ini(text: str) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as err:
        raise ConfigError(f"unreadable config file: {err}") from err
    return {name: dict(parser.items(name)) for name in parser.sections()}


def validate_config(raw: Mapping[str, Mapping[str, Any]]) -> RunConfig:
    try:
        validated = CONFIG_SCHEMA({name: dict(values) for name, values in raw.items()})
    except vol.Invalid as err:
        where = ".".join(str(p) for p in err.path) or "config"
        raise ConfigError(f"invalid value for {where}: {err.msg}") from err
    return RunConfig(validated)


def load_config(
    path: Path | str | None = None,
    overrides: Mapping[str, Mapping[str, Any]] | None = None,
) -> RunConfig:
    """Read *path* (if any), apply *overrides* (flags win) and validate."""
    raw: dict[str, dict[str, Any]] = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as err:
            raise ConfigError(f"cannot read config file {path}: {err}") from err
        raw = read_ini(text)
    for section, values in (overrides or {}).items():
        merged = raw.setdefault(section, {})
        for key, value in values.items():
            if value is not None:
                merged[key] = value
    config = validate_config(raw)
    _LOGGER.debug("Resolved config digest %s", config.digest())
    return config
