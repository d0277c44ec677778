"""Compiled prediction, model bundles and the latency benchmark."""

from __future__ import annotations

import contextlib
import json
import logging
import math
import os
import struct
import time
from collections.abc import Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import numpy as np
from numba import njit

from .common import OpCounter, glorot_uniform, sha256_bytes, sigmoid
from .const import (
    BENCH_CSV_HEADER,
    BUNDLE_MAGIC,
    BUNDLE_SECTION_EMBEDDINGS,
    BUNDLE_SECTION_FOREST,
    BUNDLE_SECTION_METADATA,
    BUNDLE_SECTION_SCHEMA,
    BUNDLE_VERSION,
    CONF_BATCH_SIZE,
    CONF_MIN_REPS,
    CONF_REPS,
    CONF_SHUFFLE_SEED,
    CONF_WARMUP,
    DEFAULT_BENCH_BATCH_SIZE,
    DEFAULT_DENSE_WIDTHS,
    DEFAULT_MIN_REPS,
    DEFAULT_REPS,
    DEFAULT_SEED,
    DEFAULT_WARMUP,
    FUZZY_FOREST_TAG,
    MODE_THREE_STEP,
    MODE_TWO_STEP,
)
from .data import Dataset, FeatureSchema, Sample, parse_schema, serialize_schema, validate_sample
from .errors import BenchError, ConfigError, ModelFormatError, ParseError, ShapeError, ValidationError
from .fuzzy import FuzzyForest, complexity_stats, export_fuzzy_forest, import_fuzzy_forest
from .gbdt import Forest, export_forest, import_forest, predict_hard
from .nn import (
    EmbeddingLayer,
    embed_sample,
    embedding_tensors,
    embeddings_from_tensors,
    stacking_dim,
)
from .tensor_io import pack_tensors, unpack_tensors

_LOGGER = logging.getLogger(__name__)

DETERMINISTIC_CREATED = "1970-01-01T00:00:00+00:00"
MIN_TIMED_TICKS = 1000

_HEADER = struct.Struct("<4sBI")
_NAME_LEN = struct.Struct("<H")
_SECTION = struct.Struct("<QQ32s")


# ── Bundle ────────────────────────────────────────────────────────────


@dataclass(eq=False)
class ModelBundle:
    """Deployable embeddings plus a hard or fuzzy forest."""

    schema: FeatureSchema
    embeddings: dict[str, EmbeddingLayer]
    forest: Forest | FuzzyForest
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        width = stacking_dim(self.schema, self.embeddings)
        if self.forest.max_feature() >= width:
            raise ShapeError(
                f"forest splits on feature {self.forest.max_feature()} but stacking width is {width}"
            )
        expected = MODE_THREE_STEP if isinstance(self.forest, FuzzyForest) else MODE_TWO_STEP
        mode = self.metadata.setdefault("mode", expected)
        if mode != expected:
            raise ValidationError(f"bundle mode {mode!r} does not match its forest ({expected})")

    @property
    def mode(self) -> str:
        return self.metadata["mode"]

    @property
    def stacking_dim(self) -> int:
        return stacking_dim(self.schema, self.embeddings)

    def hard_forest(self) -> Forest:
        """The forest served by hard traversal; c is dropped for three-step bundles."""
        if isinstance(self.forest, FuzzyForest):
            return self.forest.to_hard()
        return self.forest


def make_bundle(
    schema: FeatureSchema,
    embeddings: Mapping[str, EmbeddingLayer],
    forest: Forest | FuzzyForest,
    config_digest: str,
    deterministic: bool = True,
) -> ModelBundle:
    created = (
        DETERMINISTIC_CREATED
        if deterministic
        else datetime.now(timezone.utc).isoformat(timespec="seconds")
    )
    metadata = {
        "created": created,
        "config_digest": config_digest,
        "mode": MODE_THREE_STEP if isinstance(forest, FuzzyForest) else MODE_TWO_STEP,
    }
    return ModelBundle(schema, dict(embeddings), forest, metadata)


def _bundle_sections(bundle: ModelBundle) -> list[tuple[str, bytes]]:
    if isinstance(bundle.forest, FuzzyForest):
        forest_text = export_fuzzy_forest(bundle.forest)
    else:
        forest_text = export_forest(bundle.forest)
    return [
        (BUNDLE_SECTION_SCHEMA, serialize_schema(bundle.schema).encode("utf-8")),
        (BUNDLE_SECTION_EMBEDDINGS, pack_tensors(embedding_tensors(bundle.schema, bundle.embeddings))),
        (BUNDLE_SECTION_FOREST, forest_text.encode("utf-8")),
        (
            BUNDLE_SECTION_METADATA,
            json.dumps(bundle.metadata, sort_keys=True).encode("utf-8"),
        ),
    ]


def bundle_bytes(bundle: ModelBundle) -> bytes:
    """Container: header, section table (name, offset, length, sha256), payloads."""
    sections = _bundle_sections(bundle)
    table_size = sum(_NAME_LEN.size + len(name.encode()) + _SECTION.size for name, _ in sections)
    offset = _HEADER.size + table_size
    table: list[bytes] = []
    for name, payload in sections:
        encoded = name.encode("utf-8")
        table.append(_NAME_LEN.pack(len(encoded)) + encoded)
        table.append(_SECTION.pack(offset, len(payload), bytes.fromhex(sha256_bytes(payload))))
        offset += len(payload)
    header = _HEADER.pack(BUNDLE_MAGIC, BUNDLE_VERSION, len(sections))
    return header + b"".join(table) + b"".join(payload for _, payload in sections)


def save_bundle(bundle: ModelBundle, path: Path | str) -> Path:
    target = Path(path)
    target.write_bytes(bundle_bytes(bundle))
    _LOGGER.info("Wrote %s bundle to %s", bundle.mode, target)
    return target


def _read_sections(blob: bytes) -> dict[str, bytes]:
    if len(blob) < _HEADER.size:
        raise ModelFormatError("bundle truncated before header")
    magic, version, count = _HEADER.unpack_from(blob, 0)
    if magic != BUNDLE_MAGIC:
        raise ModelFormatError("not a model bundle")
    if version != BUNDLE_VERSION:
        raise ModelFormatError(f"unsupported bundle version {version} (expected {BUNDLE_VERSION})")
    pos = _HEADER.size
    sections: dict[str, bytes] = {}
    try:
        for _ in range(count):
            (name_len,) = _NAME_LEN.unpack_from(blob, pos)
            pos += _NAME_LEN.size
            name = blob[pos : pos + name_len].decode("utf-8")
            pos += name_len
            offset, length, digest = _SECTION.unpack_from(blob, pos)
            pos += _SECTION.size
            if offset + length > len(blob):
                raise ModelFormatError(f"bundle truncated inside section {name}")
            payload = blob[offset : offset + length]
            if sha256_bytes(payload) != digest.hex():
                raise ModelFormatError(f"checksum mismatch in section {name}")
            sections[name] = payload
    except struct.error as err:
        raise ModelFormatError(f"bundle section table truncated: {err}") from err
    except UnicodeDecodeError as err:
        raise ModelFormatError(f"bad section name: {err}") from err
    return sections


def load_bundle(path: Path | str) -> ModelBundle:
    sections = _read_sections(Path(path).read_bytes())
    try:
        schema = parse_schema(sections[BUNDLE_SECTION_SCHEMA].decode("utf-8"))
        embeddings = embeddings_from_tensors(
            schema, unpack_tensors(sections[BUNDLE_SECTION_EMBEDDINGS])
        )
        metadata = json.loads(sections[BUNDLE_SECTION_METADATA].decode("utf-8"))
        forest_text = sections[BUNDLE_SECTION_FOREST].decode("utf-8")
    except KeyError as err:
        raise ModelFormatError(f"bundle is missing section {err.args[0]}") from err
    except (ParseError, ShapeError, json.JSONDecodeError) as err:
        raise ModelFormatError(f"bundle content is invalid: {err}") from err
    try:
        if forest_text.startswith(FUZZY_FOREST_TAG):
            forest: Forest | FuzzyForest = import_fuzzy_forest(forest_text)
        else:
            forest = import_forest(forest_text)
        return ModelBundle(schema, embeddings, forest, metadata)
    except ValidationError as err:
        raise ModelFormatError(f"bundle forest is invalid: {err}") from err


# ── Compiled forest ───────────────────────────────────────────────────


@njit(cache=True)
def _traverse_rows(feature, threshold, left, right, value, roots, Y, out):
    for i in range(Y.shape[0]):
        acc = 0.0
        for t in range(roots.shape[0]):
            node = roots[t]
            while feature[node] >= 0:
                if Y[i, feature[node]] < threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            acc += value[node]
        out[i] = acc


@dataclass(frozen=True, eq=False)
class CompiledForest:
    """Breadth-first flat node arrays, one contiguous block per tree."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_value: np.ndarray
    roots: np.ndarray
    base_score: float
    learning_rate: float

    def __post_init__(self) -> None:
        n = self.feature.shape[0]
        for name in ("threshold", "left", "right", "leaf_value"):
            if getattr(self, name).shape != (n,):
                raise ShapeError(f"compiled array {name} has length {getattr(self, name).shape[0]}, expected {n}")
        internal = self.feature >= 0
        children = np.concatenate((self.left[internal], self.right[internal]))
        if children.size and (children.min() < 0 or children.max() >= n):
            raise ShapeError(f"child id {int(children.max())} exceeds the {n} compiled nodes")
        if self.roots.size and (self.roots.min() < 0 or self.roots.max() >= n):
            raise ShapeError("tree root outside the compiled node arrays")

    @classmethod
    def from_forest(cls, forest: Forest) -> CompiledForest:
        features: list[int] = []
        thresholds: list[float] = []
        lefts: list[int] = []
        rights: list[int] = []
        values: list[float] = []
        roots: list[int] = []
        for tree in forest.trees:
            base = len(features)
            roots.append(base)
            bfs = [0]
            position = {0: base}
            head = 0
            while head < len(bfs):
                node = tree.nodes[bfs[head]]
                head += 1
                if not node.is_leaf:
                    for child in (node.left, node.right):
                        position[child] = base + len(bfs)
                        bfs.append(child)
            for old in bfs:
                node = tree.nodes[old]
                features.append(node.feature if not node.is_leaf else -1)
                thresholds.append(node.threshold)
                lefts.append(position[node.left] if not node.is_leaf else -1)
                rights.append(position[node.right] if not node.is_leaf else -1)
                values.append(node.value)
        return cls(
            np.array(features, dtype=np.int64),
            np.array(thresholds, dtype=np.float64),
            np.array(lefts, dtype=np.int64),
            np.array(rights, dtype=np.int64),
            np.array(values, dtype=np.float64),
            np.array(roots, dtype=np.int64),
            forest.base_score,
            forest.learning_rate,
        )

    @property
    def n_trees(self) -> int:
        return int(self.roots.size)

    def leaf_sums(self, Y: np.ndarray) -> np.ndarray:
        Y = np.ascontiguousarray(Y, dtype=np.float64)
        out = np.empty(Y.shape[0])
        _traverse_rows(
            self.feature, self.threshold, self.left, self.right, self.leaf_value, self.roots, Y, out
        )
        return out

    def raw_scores(self, Y: np.ndarray) -> np.ndarray:
        return self.base_score + self.learning_rate * self.leaf_sums(Y)


def compile_forest(forest: Forest, width: int | None = None) -> CompiledForest:
    if width is not None and forest.max_feature() >= width:
        raise ShapeError(
            f"forest splits on feature {forest.max_feature()} but stacking width is {width}"
        )
    return CompiledForest.from_forest(forest)


class Predictor:
    """Immutable embed-then-traverse predictor."""

    def __init__(self, bundle: ModelBundle) -> None:
        self.bundle = bundle
        self.schema = bundle.schema
        self.embeddings = bundle.embeddings
        self.width = bundle.stacking_dim
        self.forest = bundle.hard_forest()
        self.compiled = compile_forest(self.forest, self.width)

    def stacking(self, sample: Sample, counter: OpCounter | None = None) -> np.ndarray:
        validate_sample(sample, self.schema)
        return embed_sample(self.schema, self.embeddings, sample, counter).values

    def predict(self, sample: Sample) -> float:
        y = self.stacking(sample)
        raw = self.compiled.raw_scores(y[None, :])[0]
        return sigmoid(float(raw))

    def predict_reference(self, sample: Sample, counter: OpCounter | None = None) -> float:
        """Uncompiled path: per-tree node walk over the source forest."""
        return sigmoid(predict_hard(self.forest, self.stacking(sample), counter))

    def predict_batch(self, dataset: Dataset) -> np.ndarray:
        """`predict` over every sample, bit-identical to the per-sample path."""
        if dataset.schema != self.schema:
            raise ShapeError("dataset schema does not match the bundle schema")
        Y = np.zeros((len(dataset), self.width))
        for i, sample in enumerate(dataset.samples):
            Y[i] = self.stacking(sample)
        return np.array([sigmoid(float(r)) for r in self.compiled.raw_scores(Y)])


def compile_bundle(bundle: ModelBundle) -> Predictor:
    return Predictor(bundle)


def predict(predictor: Predictor, sample: Sample) -> float:
    return predictor.predict(sample)


def relative_log_loss(gamma_def: float, gamma_dc: float) -> float:
    """Candidate log loss as a percentage of the baseline's."""
    if not gamma_dc > 0.0:
        raise ValidationError(f"baseline log loss must be positive, got {gamma_dc!r}")
    return gamma_def / gamma_dc * 100.0


# ── Dense reference network ───────────────────────────────────────────


@njit(cache=True)
def _dense_rows(X, weights, biases, w_off, b_off, widths, out):
    max_width = 0
    for k in range(widths.shape[0]):
        if widths[k] > max_width:
            max_width = widths[k]
    current = np.empty(max_width)
    following = np.empty(max_width)
    n_layers = widths.shape[0] - 1
    for i in range(X.shape[0]):
        n_in = widths[0]
        for k in range(n_in):
            current[k] = X[i, k]
        for layer in range(n_layers):
            n_out = widths[layer + 1]
            for o in range(n_out):
                acc = biases[b_off[layer] + o]
                row = w_off[layer] + o * n_in
                for k in range(n_in):
                    acc += weights[row + k] * current[k]
                if layer < n_layers - 1 and acc < 0.0:
                    acc = 0.0
                following[o] = acc
            current, following = following, current
            n_in = n_out
        out[i] = current[0]


class DenseReference:
    """Plain fully connected ReLU network used as the latency yardstick."""

    def __init__(self, widths: Sequence[int] = DEFAULT_DENSE_WIDTHS, seed: int = DEFAULT_SEED) -> None:
        if len(widths) < 2 or widths[-1] != 1 or any(w < 1 for w in widths):
            raise ConfigError("dense widths need an input width and a single output")
        rng = np.random.default_rng(seed)
        self.widths = np.array(widths, dtype=np.int64)
        layers = [glorot_uniform(rng, widths[k + 1], widths[k]) for k in range(len(widths) - 1)]
        self.weights = np.concatenate([w.ravel() for w in layers])
        self.biases = np.zeros(int(sum(widths[1:])))
        self.w_off = np.cumsum([0] + [w.size for w in layers[:-1]]).astype(np.int64)
        self.b_off = np.cumsum([0] + list(widths[1:-1])).astype(np.int64)

    @property
    def input_dim(self) -> int:
        return int(self.widths[0])

    def forward(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise ShapeError(f"dense input of shape {X.shape} does not match width {self.input_dim}")
        out = np.empty(X.shape[0])
        _dense_rows(X, self.weights, self.biases, self.w_off, self.b_off, self.widths, out)
        return out


# ── Benchmark ─────────────────────────────────────────────────────────


@dataclass(frozen=True)
class BenchConfig:
    warmup: int = DEFAULT_WARMUP
    reps: int = DEFAULT_REPS
    shuffle_seed: int = DEFAULT_SEED
    batch_size: int = DEFAULT_BENCH_BATCH_SIZE
    min_reps: int = DEFAULT_MIN_REPS
    pin_cpu: bool = True

    def __post_init__(self) -> None:
        if self.warmup < 1:
            raise ConfigError("warmup must be at least 1")
        if self.reps < 1:
            raise ConfigError("reps must be at least 1")
        if self.batch_size < 1 or self.min_reps < 1:
            raise ConfigError("batch_size and min_reps must be positive")
        if self.reps < self.min_reps:
            raise ConfigError(f"reps {self.reps} is below the configured minimum {self.min_reps}")

    @classmethod
    def from_mapping(cls, section: Mapping[str, Any]) -> BenchConfig:
        return cls(
            warmup=section[CONF_WARMUP],
            reps=section[CONF_REPS],
            shuffle_seed=section[CONF_SHUFFLE_SEED],
            batch_size=section[CONF_BATCH_SIZE],
            min_reps=section[CONF_MIN_REPS],
        )


@dataclass(frozen=True)
class BenchReport:
    config: str
    n_t: int
    d_t: float
    D: int
    t1_ns: float
    t2_ns: float
    total_ns: float
    p50_ns: float
    p99_ns: float
    reps: int
    metadata: dict[str, Any] = field(default_factory=dict, compare=False)

    @staticmethod
    def csv_header() -> str:
        return ",".join(BENCH_CSV_HEADER)

    def to_csv_row(self) -> str:
        return ",".join(
            [
                self.config,
                str(self.n_t),
                f"{self.d_t:.3f}",
                str(self.D),
                f"{self.t1_ns:.1f}",
                f"{self.t2_ns:.1f}",
                f"{self.total_ns:.1f}",
                f"{self.p50_ns:.1f}",
                f"{self.p99_ns:.1f}",
                str(self.reps),
            ]
        )

    def summary(self) -> str:
        return (
            f"{self.config}: n_t={self.n_t} d_t={self.d_t:.2f} D={self.D} "
            f"T1={self.t1_ns / 1000:.3f}us T2={self.t2_ns / 1000:.3f}us "
            f"total={self.total_ns / 1000:.3f}us p50={self.p50_ns / 1000:.3f}us "
            f"p99={self.p99_ns / 1000:.3f}us reps={self.reps}"
        )


@contextlib.contextmanager
def _single_processor(enabled: bool) -> Iterator[int | None]:
    """Pin the calling thread to one logical processor where the OS allows."""
    if not enabled or not hasattr(os, "sched_setaffinity"):
        yield None
        return
    previous = os.sched_getaffinity(0)
    cpu = min(previous)
    try:
        os.sched_setaffinity(0, {cpu})
    except OSError:
        _LOGGER.warning("Could not pin the benchmark to one processor")
        yield None
        return
    try:
        yield cpu
    finally:
        os.sched_setaffinity(0, previous)


def _timed_batch(fn: Any, batch: int) -> float:
    """Per-item nanoseconds of `fn()`, which processes *batch* items."""
    start = time.perf_counter_ns()
    fn()
    return (time.perf_counter_ns() - start) / batch


def _batch_repeats(fn: Any) -> int:
    """How many calls of *fn* a timed block needs to span the clock resolution."""
    resolution_ns = time.get_clock_info("perf_counter").resolution * 1e9
    start = time.perf_counter_ns()
    fn()
    elapsed = max(time.perf_counter_ns() - start, 1)
    needed = MIN_TIMED_TICKS * resolution_ns
    if elapsed >= needed:
        return 1
    return int(math.ceil(needed / elapsed))


def _summarise(
    name: str,
    t1: np.ndarray,
    t2: np.ndarray,
    n_t: int,
    d_t: float,
    width: int,
    metadata: dict[str, Any],
) -> BenchReport:
    total = t1 + t2
    p50, p99 = np.percentile(total, [50.0, 99.0])
    floor = 1e-3
    return BenchReport(
        config=name,
        n_t=n_t,
        d_t=d_t,
        D=width,
        t1_ns=float(np.median(t1)),
        t2_ns=max(float(np.median(t2)), floor),
        total_ns=max(float(np.median(total)), floor),
        p50_ns=max(float(p50), floor),
        p99_ns=max(float(p99), floor),
        reps=int(total.size),
        metadata=metadata,
    )


def _forest_shape(forest: Forest) -> tuple[int, float]:
    if not forest.trees:
        return 0, 0.0
    return len(forest.trees), complexity_stats(forest).d_t


def bench_forest(
    compiled: CompiledForest,
    Y: np.ndarray,
    config: BenchConfig,
    name: str = "forest",
    forest: Forest | None = None,
) -> BenchReport:
    """T2 only: compiled traversal over pre-built stacking vectors."""
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    if Y.shape[0] == 0:
        raise BenchError("benchmark needs at least one stacking vector")
    rng = np.random.default_rng(config.shuffle_seed)
    order = rng.permutation(Y.shape[0])
    batch = min(config.batch_size, Y.shape[0])
    chunks = [
        np.ascontiguousarray(Y[np.resize(order, (r + 1) * batch)[r * batch :]])
        for r in range(config.reps)
    ]
    out = np.empty(batch)
    with _single_processor(config.pin_cpu) as cpu:
        for _ in range(config.warmup):
            compiled.leaf_sums(chunks[0])
        repeats = _batch_repeats(lambda: compiled.leaf_sums(chunks[0]))

        def run(chunk: np.ndarray) -> None:
            for _ in range(repeats):
                _traverse_rows(
                    compiled.feature, compiled.threshold, compiled.left, compiled.right,
                    compiled.leaf_value, compiled.roots, chunk, out,
                )

        t2 = np.array([_timed_batch(lambda c=c: run(c), batch * repeats) for c in chunks])
    n_t, d_t = _forest_shape(forest) if forest is not None else (compiled.n_trees, 0.0)
    metadata = {"batch_size": batch, "batch_repeats": repeats, "pinned_cpu": cpu}
    return _summarise(name, np.zeros_like(t2), t2, n_t, d_t, int(Y.shape[1]), metadata)


def bench_dense(
    reference: DenseReference, X: np.ndarray, config: BenchConfig, name: str = "dnn"
) -> BenchReport:
    """Per-sample forward time of the dense reference network."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.shape[0] == 0:
        raise BenchError("benchmark needs at least one input row")
    rng = np.random.default_rng(config.shuffle_seed)
    order = rng.permutation(X.shape[0])
    batch = min(config.batch_size, X.shape[0])
    chunks = [
        np.ascontiguousarray(X[np.resize(order, (r + 1) * batch)[r * batch :]])
        for r in range(config.reps)
    ]
    with _single_processor(config.pin_cpu) as cpu:
        for _ in range(config.warmup):
            reference.forward(chunks[0])
        t2 = np.array([_timed_batch(lambda c=c: reference.forward(c), batch) for c in chunks])
    metadata = {"batch_size": batch, "batch_repeats": 1, "pinned_cpu": cpu}
    return _summarise(name, np.zeros_like(t2), t2, 0, 0.0, reference.input_dim, metadata)


def bench(
    predictor: Predictor, dataset: Dataset, config: BenchConfig, name: str = "def"
) -> BenchReport:
    """T1 (embedding) and T2 (traversal) per sample; parsing stays outside the clock."""
    if len(dataset) == 0:
        raise BenchError("benchmark needs a non-empty dataset")
    if dataset.schema != predictor.schema:
        raise ShapeError("dataset schema does not match the predictor")
    rng = np.random.default_rng(config.shuffle_seed)
    order = rng.permutation(len(dataset))
    batch = min(config.batch_size, len(dataset))
    chunks = [
        [dataset.samples[i] for i in np.resize(order, (r + 1) * batch)[r * batch :]]
        for r in range(config.reps)
    ]
    schema = predictor.schema
    embeddings = predictor.embeddings
    compiled = predictor.compiled

    def embed_chunk(chunk: list[Sample]) -> np.ndarray:
        return np.vstack([embed_sample(schema, embeddings, s).values for s in chunk])

    stacked = [embed_chunk(chunk) for chunk in chunks]
    out = np.empty(batch)
    with _single_processor(config.pin_cpu) as cpu:
        for _ in range(config.warmup):
            embed_chunk(chunks[0])
            compiled.leaf_sums(stacked[0])
        repeats = _batch_repeats(lambda: compiled.leaf_sums(stacked[0]))

        def traverse(Y: np.ndarray) -> None:
            for _ in range(repeats):
                _traverse_rows(
                    compiled.feature, compiled.threshold, compiled.left, compiled.right,
                    compiled.leaf_value, compiled.roots, Y, out,
                )

        t1 = np.array([_timed_batch(lambda c=c: embed_chunk(c), batch) for c in chunks])
        t2 = np.array([_timed_batch(lambda y=y: traverse(y), batch * repeats) for y in stacked])
    n_t, d_t = _forest_shape(predictor.forest)
    metadata = {"batch_size": batch, "batch_repeats": repeats, "pinned_cpu": cpu}
    if repeats > 1:
        _LOGGER.info("Clock resolution too coarse; timed %d traversal passes per batch", repeats)
    report = _summarise(name, t1, t2, n_t, d_t, predictor.width, metadata)
    _LOGGER.info("%s", report.summary())
    return report
