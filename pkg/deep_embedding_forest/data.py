"""Feature schema, sample parsing, tri-letter featurization and synthetic data."""

from __future__ import annotations

import logging
import math
from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from typing import Union

import numpy as np
import scipy.sparse as sp

from .common import _coerce_finite_float, _coerce_positive_int, sha256_bytes
from .const import (
    FLAG_EMBED,
    FLAG_RAW,
    FNV64_MASK,
    FNV64_OFFSET,
    FNV64_PRIME,
    KIND_DENSE,
    KIND_SPARSE,
    TRILETTER_PAD,
)
from .errors import ConfigError, ParseError, ShapeError, ValidationError

_LOGGER = logging.getLogger(__name__)

SYNTH_SPARSE_NAMES = ("query", "keyword", "title")
SYNTH_DENSE_NAME = "counts"
SYNTH_NNZ_RANGE = (3, 10)
SYNTH_PLANTED_FRACTION = 0.1
SYNTH_DENSE_THRESHOLD = 0.5


# ── Types ─────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class FeatureGroup:
    """One raw feature group (n_j columns) of the input."""

    name: str
    kind: str
    dim: int
    embed: bool

    def __post_init__(self) -> None:
        if self.kind not in (KIND_SPARSE, KIND_DENSE):
            raise ValidationError(f"unknown kind {self.kind!r} for group {self.name}")
        if self.dim < 1:
            raise ValidationError(f"group {self.name} has non-positive dim {self.dim}")

    @property
    def is_sparse(self) -> bool:
        return self.kind == KIND_SPARSE


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered feature groups; total raw dimension is the sum of group dims."""

    groups: tuple[FeatureGroup, ...]

    def __post_init__(self) -> None:
        if not self.groups:
            raise ValidationError("no groups")
        seen: set[str] = set()
        for group in self.groups:
            if group.name in seen:
                raise ValidationError(f"duplicate group {group.name}")
            seen.add(group.name)

    def __len__(self) -> int:
        return len(self.groups)

    @property
    def raw_dim(self) -> int:
        return sum(group.dim for group in self.groups)

    def index_of(self, name: str) -> int:
        for idx, group in enumerate(self.groups):
            if group.name == name:
                return idx
        raise KeyError(name)


class SparseVector:
    """Sorted unique non-negative indices with finite non-zero values."""

    __slots__ = ("indices", "values", "dim")

    def __init__(
        self,
        indices: Sequence[int] | np.ndarray,
        values: Sequence[float] | np.ndarray,
        dim: int,
    ) -> None:
        idx = np.asarray(indices, dtype=np.int64).reshape(-1)
        val = np.asarray(values, dtype=np.float64).reshape(-1)
        if idx.shape != val.shape:
            raise ShapeError(
                f"sparse vector has {idx.size} indices but {val.size} values"
            )
        if idx.size:
            if idx[0] < 0 or idx[-1] >= dim:
                raise ShapeError("index out of range")
            if np.any(np.diff(idx) <= 0):
                raise ValidationError("sparse indices must be strictly increasing")
            if not np.all(np.isfinite(val)):
                raise ValidationError("non-finite sparse value")
            if np.any(val == 0.0):
                raise ValidationError("explicit zero in sparse vector")
        self.indices = idx
        self.values = val
        self.dim = dim

    @classmethod
    def empty(cls, dim: int) -> SparseVector:
        return cls(np.empty(0, dtype=np.int64), np.empty(0), dim)

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def to_dense(self) -> np.ndarray:
        dense = np.zeros(self.dim)
        dense[self.indices] = self.values
        return dense

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SparseVector):
            return NotImplemented
        return (
            self.dim == other.dim
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.values, other.values)
        )

    def __repr__(self) -> str:
        pairs = ", ".join(
            f"{i}:{v:g}" for i, v in zip(self.indices.tolist(), self.values.tolist())
        )
        return f"SparseVector(dim={self.dim}, [{pairs}])"


FieldValue = Union[SparseVector, np.ndarray]


@dataclass(frozen=True, eq=False)
class Sample:
    """A labelled sample: one field per schema group, in schema order."""

    label: int
    fields: tuple[FieldValue, ...]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Sample):
            return NotImplemented
        if self.label != other.label or len(self.fields) != len(other.fields):
            return False
        for mine, theirs in zip(self.fields, other.fields):
            if isinstance(mine, SparseVector):
                if not isinstance(theirs, SparseVector) or mine != theirs:
                    return False
            elif isinstance(theirs, SparseVector) or not np.array_equal(mine, theirs):
                return False
        return True


def validate_sample(sample: Sample, schema: FeatureSchema) -> None:
    """Raise ShapeError unless *sample* fits *schema*."""
    if sample.label not in (0, 1):
        raise ValidationError(f"label must be 0 or 1, got {sample.label!r}")
    if len(sample.fields) != len(schema.groups):
        raise ShapeError(
            f"sample has {len(sample.fields)} fields, schema has {len(schema.groups)}"
        )
    for group, value in zip(schema.groups, sample.fields):
        if group.is_sparse:
            if not isinstance(value, SparseVector) or value.dim != group.dim:
                raise ShapeError(f"group {group.name} expects a sparse vector of dim {group.dim}")
        elif isinstance(value, SparseVector) or np.shape(value) != (group.dim,):
            raise ShapeError(f"group {group.name} expects a dense vector of length {group.dim}")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable collection of samples sharing one schema."""

    schema: FeatureSchema
    samples: tuple[Sample, ...]
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        for sample in self.samples:
            validate_sample(sample, self.schema)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def labels(self) -> np.ndarray:
        if "labels" not in self._cache:
            self._cache["labels"] = np.array(
                [s.label for s in self.samples], dtype=np.float64
            )
        return self._cache["labels"]

    def group_matrix(
        self, j: int, rows: np.ndarray | None = None
    ) -> sp.csr_matrix | np.ndarray:
        """Raw inputs of group *j*: CSR for sparse groups, ndarray for dense."""
        key = ("group", j)
        if key not in self._cache:
            self._cache[key] = self._build_group_matrix(j)
        matrix = self._cache[key]
        if rows is None:
            return matrix
        return matrix[rows]

    def _build_group_matrix(self, j: int) -> sp.csr_matrix | np.ndarray:
        group = self.schema.groups[j]
        n = len(self.samples)
        if not group.is_sparse:
            if n == 0:
                return np.zeros((0, group.dim))
            return np.vstack([np.asarray(s.fields[j], dtype=np.float64) for s in self.samples])
        indptr = np.zeros(n + 1, dtype=np.int64)
        for i, sample in enumerate(self.samples):
            indptr[i + 1] = indptr[i] + sample.fields[j].nnz
        if n:
            indices = np.concatenate([s.fields[j].indices for s in self.samples])
            data = np.concatenate([s.fields[j].values for s in self.samples])
        else:
            indices = np.empty(0, dtype=np.int64)
            data = np.empty(0)
        return sp.csr_matrix((data, indices, indptr), shape=(n, group.dim))

    def subset(self, rows: Iterable[int]) -> Dataset:
        return Dataset(self.schema, tuple(self.samples[i] for i in rows))

    def digest(self) -> str:
        """sha256 of the canonical schema and sample text."""
        if "digest" not in self._cache:
            text = serialize_schema(self.schema) + "".join(serialize_samples(self))
            self._cache["digest"] = sha256_bytes(text.encode("utf-8"))
        return self._cache["digest"]


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of the planted-rule synthetic click dataset."""

    n_samples: int
    n_sparse_dims: int
    n_dense_dims: int
    interaction_depth: int
    noise: float
    seed: int
    n_sparse_groups: int = 2

    def __post_init__(self) -> None:
        if self.n_samples < 0:
            raise ConfigError("n_samples must be non-negative")
        for name in ("n_sparse_dims", "n_dense_dims", "interaction_depth", "n_sparse_groups"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if not 0.0 <= self.noise <= 0.5:
            raise ConfigError("noise must be within [0, 0.5]")


# ── Schema text ───────────────────────────────────────────────────────


def _strip_comment(line: str) -> str:
    return line.split("#", 1)[0].strip()


def parse_schema(text: str) -> FeatureSchema:
    """Parse `name kind dim embed|raw` lines into a FeatureSchema."""
    groups: list[FeatureGroup] = []
    names: set[str] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw)
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ParseError(
                f"expected 'name kind dim embed|raw', got {line!r}", lineno
            )
        name, kind, dim_text, flag = parts
        if kind not in (KIND_SPARSE, KIND_DENSE):
            raise ParseError(f"unknown kind {kind!r}", lineno)
        dim = _coerce_positive_int(dim_text)
        if dim is None:
            raise ParseError(f"non-positive dim {dim_text!r} for group {name}", lineno)
        if flag not in (FLAG_EMBED, FLAG_RAW):
            raise ParseError(f"expected embed or raw, got {flag!r}", lineno)
        if name in names:
            raise ParseError(f"duplicate group {name}", lineno)
        names.add(name)
        groups.append(FeatureGroup(name, kind, dim, flag == FLAG_EMBED))
    if not groups:
        raise ParseError("no groups")
    return FeatureSchema(tuple(groups))


def serialize_schema(schema: FeatureSchema) -> str:
    return "".join(
        f"{g.name} {g.kind} {g.dim} {FLAG_EMBED if g.embed else FLAG_RAW}\n"
        for g in schema.groups
    )


# ── Sample text ───────────────────────────────────────────────────────


def _format_value(value: float) -> str:
    """Integral values print without a fraction, so -0.0 is written as `0`."""
    if value.is_integer() and abs(value) < 1e15:
        return str(int(value))
    return repr(value)


def _parse_label(text: str, lineno: int) -> int:
    if text not in ("0", "1"):
        raise ParseError(f"label must be 0 or 1, got {text!r}", lineno)
    return int(text)


def _parse_sparse_field(text: str, group: FeatureGroup, lineno: int) -> SparseVector:
    """Canonical vector: explicit zeros (including -0.0) are dropped, indices sorted."""
    pairs: dict[int, float] = {}
    seen: set[int] = set()
    for token in text.split():
        idx_text, sep, val_text = token.partition(":")
        if not sep:
            raise ParseError(f"expected idx:val in group {group.name}, got {token!r}", lineno)
        try:
            idx = int(idx_text)
        except ValueError as err:
            raise ParseError(f"bad index {idx_text!r} in group {group.name}", lineno) from err
        if idx < 0 or idx >= group.dim:
            raise ParseError(
                f"index out of range: {idx} not in [0, {group.dim}) for group {group.name}",
                lineno,
            )
        value = _coerce_finite_float(val_text)
        if value is None:
            raise ParseError(f"non-finite value {val_text!r} in group {group.name}", lineno)
        if idx in seen:
            raise ParseError(f"duplicate index {idx} in group {group.name}", lineno)
        seen.add(idx)
        if value != 0.0:
            pairs[idx] = value
    ordered = sorted(pairs)
    return SparseVector(ordered, [pairs[i] for i in ordered], group.dim)


def _parse_dense_field(text: str, group: FeatureGroup, lineno: int) -> np.ndarray:
    parts = text.split(",") if text.strip() else []
    if len(parts) != group.dim:
        raise ParseError(
            f"group {group.name} expects {group.dim} values, got {len(parts)}", lineno
        )
    values = np.empty(group.dim)
    for k, part in enumerate(parts):
        value = _coerce_finite_float(part)
        if value is None:
            raise ParseError(f"non-finite value {part!r} in group {group.name}", lineno)
        values[k] = value
    return values


def parse_samples(stream: Iterable[str], schema: FeatureSchema) -> Dataset:
    """Parse sample lines `<label>\\t<field1>...\\t<fieldK>`."""
    samples: list[Sample] = []
    expected = len(schema.groups) + 1
    for lineno, raw in enumerate(stream, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != expected:
            raise ParseError(
                f"wrong field count: expected {expected} tab-separated fields, got {len(parts)}",
                lineno,
            )
        label = _parse_label(parts[0].strip(), lineno)
        fields: list[FieldValue] = []
        for group, text in zip(schema.groups, parts[1:]):
            if group.is_sparse:
                fields.append(_parse_sparse_field(text, group, lineno))
            else:
                fields.append(_parse_dense_field(text, group, lineno))
        samples.append(Sample(label, tuple(fields)))
    _LOGGER.debug("Parsed %d samples", len(samples))
    return Dataset(schema, tuple(samples))


def serialize_sample(sample: Sample) -> str:
    parts = [str(sample.label)]
    for value in sample.fields:
        if isinstance(value, SparseVector):
            parts.append(
                " ".join(
                    f"{i}:{_format_value(v)}"
                    for i, v in zip(value.indices.tolist(), value.values.tolist())
                )
            )
        else:
            parts.append(",".join(_format_value(float(v)) for v in value))
    return "\t".join(parts) + "\n"


def serialize_samples(dataset: Dataset) -> Iterable[str]:
    for sample in dataset.samples:
        yield serialize_sample(sample)


# ── Tri-letter grams ──────────────────────────────────────────────────


def fnv1a_64(data: bytes) -> int:
    h = FNV64_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV64_PRIME) & FNV64_MASK
    return h


def triletter_grams(text: str) -> list[str]:
    grams: list[str] = []
    for word in text.lower().split():
        padded = f"{TRILETTER_PAD}{word}{TRILETTER_PAD}"
        grams.extend(padded[i : i + 3] for i in range(len(padded) - 2))
    return grams


def triletter_featurize(text: str, dim: int) -> SparseVector:
    """Hash `#`-padded 3-character windows of *text* into a multi-hot vector."""
    if dim < 1:
        raise ValidationError("dim must be positive")
    counts: Counter[int] = Counter(
        fnv1a_64(gram.encode("utf-8")) % dim for gram in triletter_grams(text)
    )
    ordered = sorted(counts)
    return SparseVector(ordered, [float(counts[i]) for i in ordered], dim)


def featurize_records(stream: Iterable[str], schema: FeatureSchema) -> Dataset:
    """Raw record lines: free text for sparse groups, comma decimals for dense."""
    samples: list[Sample] = []
    expected = len(schema.groups) + 1
    for lineno, raw in enumerate(stream, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != expected:
            raise ParseError(
                f"wrong field count: expected {expected} tab-separated fields, got {len(parts)}",
                lineno,
            )
        label = _parse_label(parts[0].strip(), lineno)
        fields: list[FieldValue] = []
        for group, text in zip(schema.groups, parts[1:]):
            if group.is_sparse:
                fields.append(triletter_featurize(text, group.dim))
            else:
                fields.append(_parse_dense_field(text, group, lineno))
        samples.append(Sample(label, tuple(fields)))
    return Dataset(schema, tuple(samples))


# ── Synthetic data ────────────────────────────────────────────────────


def synthetic_schema(config: SynthConfig) -> FeatureSchema:
    groups = [
        FeatureGroup(
            SYNTH_SPARSE_NAMES[k] if k < len(SYNTH_SPARSE_NAMES) else f"text{k}",
            KIND_SPARSE,
            config.n_sparse_dims,
            True,
        )
        for k in range(config.n_sparse_groups)
    ]
    groups.append(FeatureGroup(SYNTH_DENSE_NAME, KIND_DENSE, config.n_dense_dims, False))
    return FeatureSchema(tuple(groups))


def gen_synthetic(config: SynthConfig) -> Dataset:
    """Generate a click-like dataset whose label is a planted interaction rule.

    The rule is the parity of `interaction_depth` predicates, i.e. a
    disjunction of conjunctions. The first predicate is always
    `counts[0] >= 0.5`; further predicates alternate between "the sparse
    group contains a planted index" and a dense threshold.
    """
    schema = synthetic_schema(config)
    rng = np.random.default_rng(config.seed)
    n = config.n_samples
    n_groups = config.n_sparse_groups
    dim = config.n_sparse_dims

    planted_size = max(1, int(round(SYNTH_PLANTED_FRACTION * dim)))
    planted = [
        np.sort(rng.choice(dim, size=min(planted_size, dim), replace=False))
        for _ in range(n_groups)
    ]
    thresholds = rng.uniform(0.3, 0.7, size=config.interaction_depth)
    thresholds[0] = SYNTH_DENSE_THRESHOLD

    dense = rng.random((n, config.n_dense_dims))
    nnz = rng.integers(SYNTH_NNZ_RANGE[0], SYNTH_NNZ_RANGE[1] + 1, size=(n, n_groups))
    draws = rng.integers(0, dim, size=int(nnz.sum()))
    flips = rng.random(n) < config.noise

    sparse_fields: list[list[SparseVector]] = []
    hits = np.zeros((n, n_groups), dtype=bool)
    pos = 0
    for i in range(n):
        row: list[SparseVector] = []
        for k in range(n_groups):
            chunk = draws[pos : pos + nnz[i, k]]
            pos += nnz[i, k]
            uniq, counts = np.unique(chunk, return_counts=True)
            row.append(SparseVector(uniq, counts.astype(np.float64), dim))
            hits[i, k] = bool(np.isin(uniq, planted[k]).any())
        sparse_fields.append(row)

    parity = np.zeros(n, dtype=bool)
    for p in range(config.interaction_depth):
        if p == 0:
            term = dense[:, 0] >= thresholds[0]
        elif p % 2 == 1:
            term = hits[:, ((p - 1) // 2) % n_groups]
        else:
            term = dense[:, (p // 2) % config.n_dense_dims] >= thresholds[p]
        parity ^= term
    labels = parity ^ flips

    samples = tuple(
        Sample(int(labels[i]), tuple(sparse_fields[i]) + (dense[i].copy(),))
        for i in range(n)
    )
    _LOGGER.info(
        "Generated %d synthetic samples (seed=%d, depth=%d, positive rate=%.3f)",
        n,
        config.seed,
        config.interaction_depth,
        float(labels.mean()) if n else math.nan,
    )
    return Dataset(schema, samples)
