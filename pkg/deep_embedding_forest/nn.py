"""Embedding layers, residual units and the Deep Crossing step-1 trainer."""

from __future__ import annotations

import copy
import json
import logging
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, TextIO

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .common import OpCounter, clamp_prob, format_float, glorot_uniform, sha256_bytes, sigmoid
from .const import (
    CHECKPOINT_FORMAT_VERSION,
    CHECKPOINT_MANIFEST,
    CHECKPOINT_TENSORS,
    CONF_ADAM_BETA1,
    CONF_ADAM_BETA2,
    CONF_ADAM_EPS,
    CONF_BATCH_SIZE,
    CONF_EMBED_DIM,
    CONF_EPOCHS,
    CONF_L2,
    CONF_LEARNING_RATE,
    CONF_RESIDUAL_HIDDEN,
    CONF_SEED,
    DEFAULT_ADAM_BETA1,
    DEFAULT_ADAM_BETA2,
    DEFAULT_ADAM_EPS,
    DEFAULT_BATCH_SIZE,
    DEFAULT_EMBED_DIM,
    DEFAULT_EPOCHS,
    DEFAULT_L2,
    DEFAULT_LEARNING_RATE,
    DEFAULT_RESIDUAL_HIDDEN,
    DEFAULT_SEED,
    PROB_EPS,
)
from .data import Dataset, FeatureSchema, Sample, SparseVector, parse_schema, serialize_schema
from .errors import (
    ConfigError,
    ModelFormatError,
    ParseError,
    ShapeError,
    TrainingDivergedError,
    ValidationError,
)
from .optim import Adam, load_parameters
from .tensor_io import pack_tensors, unpack_tensors

_LOGGER = logging.getLogger(__name__)

PREDICT_CHUNK = 4096


# ── Types ─────────────────────────────────────────────────────────────


@dataclass
class EmbeddingLayer:
    """Rectified single layer mapping n_j raw inputs to m_j outputs."""

    W: np.ndarray
    b: np.ndarray

    def __post_init__(self) -> None:
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ShapeError(
                f"embedding W {self.W.shape} and b {self.b.shape} disagree"
            )
        if self.W.shape[0] < 1:
            raise ShapeError("embedding width must be at least 1")

    @property
    def m(self) -> int:
        return self.W.shape[0]

    @property
    def n(self) -> int:
        return self.W.shape[1]


@dataclass(frozen=True)
class StackingVector:
    values: np.ndarray
    offsets: tuple[int, ...]

    @property
    def dim(self) -> int:
        return int(self.values.size)


@dataclass
class ResidualUnit:
    """`relu(x + W2 relu(W1 x + b1) + b2)` with W1 (h, d) and W2 (d, h)."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def __post_init__(self) -> None:
        h, d = self.W1.shape
        if self.b1.shape != (h,) or self.W2.shape != (d, h) or self.b2.shape != (d,):
            raise ShapeError(
                f"residual unit shapes W1 {self.W1.shape}, b1 {self.b1.shape}, "
                f"W2 {self.W2.shape}, b2 {self.b2.shape} are inconsistent"
            )

    @property
    def width(self) -> int:
        return self.W1.shape[1]


@dataclass
class DeepCrossingModel:
    schema: FeatureSchema
    embeddings: dict[str, EmbeddingLayer]
    residual_units: list[ResidualUnit]
    w_s: np.ndarray
    b_s: np.ndarray
    loss_history: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.b_s = np.asarray(self.b_s, dtype=np.float64).reshape(())
        width = stacking_dim(self.schema, self.embeddings)
        for unit in self.residual_units:
            if unit.width != width:
                raise ShapeError(
                    f"residual unit width {unit.width} does not match stacking width {width}"
                )
        if self.w_s.shape != (width,):
            raise ShapeError(f"scoring weights {self.w_s.shape} do not match width {width}")

    @property
    def stacking_dim(self) -> int:
        return int(self.w_s.size)

    def embedding_parameters(self) -> list[np.ndarray]:
        params: list[np.ndarray] = []
        for group in self.schema.groups:
            if group.embed:
                layer = self.embeddings[group.name]
                params.extend((layer.W, layer.b))
        return params

    def parameters(self) -> list[np.ndarray]:
        """All trainable arrays in a fixed order shared with `backward_batch`."""
        params = self.embedding_parameters()
        for unit in self.residual_units:
            params.extend((unit.W1, unit.b1, unit.W2, unit.b2))
        params.extend((self.w_s, self.b_s))
        return params


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = DEFAULT_EPOCHS
    batch_size: int = DEFAULT_BATCH_SIZE
    learning_rate: float = DEFAULT_LEARNING_RATE
    adam_beta1: float = DEFAULT_ADAM_BETA1
    adam_beta2: float = DEFAULT_ADAM_BETA2
    adam_eps: float = DEFAULT_ADAM_EPS
    seed: int = DEFAULT_SEED
    l2: float = DEFAULT_L2
    embed_dim: int = DEFAULT_EMBED_DIM
    residual_hidden: tuple[int, ...] = DEFAULT_RESIDUAL_HIDDEN

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        # lr == 0 keeps every parameter at its initialized value.
        if not self.learning_rate >= 0.0:
            raise ConfigError("learning_rate must be non-negative")
        if self.l2 < 0.0:
            raise ConfigError("l2 must be non-negative")
        if self.embed_dim < 1 or any(h < 1 for h in self.residual_hidden):
            raise ConfigError("layer widths must be positive")

    @classmethod
    def from_mapping(cls, section: Mapping[str, Any], seed: int) -> TrainConfig:
        return cls(
            epochs=section[CONF_EPOCHS],
            batch_size=section[CONF_BATCH_SIZE],
            learning_rate=section[CONF_LEARNING_RATE],
            adam_beta1=section[CONF_ADAM_BETA1],
            adam_beta2=section[CONF_ADAM_BETA2],
            adam_eps=section[CONF_ADAM_EPS],
            seed=seed,
            l2=section[CONF_L2],
            embed_dim=section[CONF_EMBED_DIM],
            residual_hidden=tuple(section[CONF_RESIDUAL_HIDDEN]),
        )


@dataclass(frozen=True, eq=False)
class StackedDataset:
    """Pairs (t_i, stacking vector) produced by `extract_stacking`."""

    labels: np.ndarray
    values: np.ndarray
    offsets: tuple[int, ...] = (0,)

    def __post_init__(self) -> None:
        if self.values.ndim != 2 or self.values.shape[0] != self.labels.shape[0]:
            raise ShapeError(
                f"stacked values {self.values.shape} do not match {self.labels.shape[0]} labels"
            )

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def dim(self) -> int:
        return int(self.values.shape[1])

    def row(self, i: int) -> StackingVector:
        return StackingVector(self.values[i], self.offsets)


@dataclass
class EmbedCache:
    inputs: list[Any]
    pre: list[np.ndarray | None]


@dataclass
class ForwardCache:
    embed: EmbedCache
    stacked: np.ndarray
    residual: list[tuple[np.ndarray, np.ndarray, np.ndarray]]
    top: np.ndarray
    logits: np.ndarray
    probs: np.ndarray


# ── Single-sample operations ──────────────────────────────────────────


def embed_forward(
    x: SparseVector | np.ndarray,
    layer: EmbeddingLayer,
    counter: OpCounter | None = None,
) -> np.ndarray:
    """g(W x + b) with g the rectifier; sparse x touches only its non-zeros."""
    if isinstance(x, SparseVector):
        if x.dim != layer.n:
            raise ShapeError(f"input dim {x.dim} does not match layer input {layer.n}")
        z = layer.W[:, x.indices] @ x.values + layer.b
        if counter is not None:
            counter.multiplies += x.nnz * layer.m
    else:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (layer.n,):
            raise ShapeError(f"input shape {x.shape} does not match layer input {layer.n}")
        z = layer.W @ x + layer.b
        if counter is not None:
            counter.multiplies += layer.n * layer.m
    return np.maximum(z, 0.0)


def stack(parts: Sequence[np.ndarray]) -> StackingVector:
    if not parts:
        raise ValidationError("stack needs at least one part")
    offsets: list[int] = []
    position = 0
    for part in parts:
        offsets.append(position)
        position += int(np.size(part))
    values = np.concatenate([np.asarray(p, dtype=np.float64).reshape(-1) for p in parts])
    return StackingVector(values, tuple(offsets))


def residual_forward(x: np.ndarray, unit: ResidualUnit) -> np.ndarray:
    if np.shape(x) != (unit.width,):
        raise ShapeError(f"input shape {np.shape(x)} does not match residual width {unit.width}")
    hidden = np.maximum(unit.W1 @ x + unit.b1, 0.0)
    return np.maximum(x + unit.W2 @ hidden + unit.b2, 0.0)


def score(x: np.ndarray, w_s: np.ndarray, b_s: float) -> float:
    if np.shape(x) != np.shape(w_s):
        raise ShapeError(f"scoring input {np.shape(x)} does not match weights {np.shape(w_s)}")
    return clamp_prob(sigmoid(float(np.dot(w_s, x)) + float(b_s)))


def log_loss(p: float, y: int) -> float:
    return -(y * math.log(p) + (1 - y) * math.log(1.0 - p))


def mean_log_loss(p: np.ndarray, y: np.ndarray) -> float:
    if len(p) == 0:
        raise ValidationError("log loss of an empty batch")
    p = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def stacking_dim(schema: FeatureSchema, embeddings: Mapping[str, EmbeddingLayer]) -> int:
    width = 0
    for group in schema.groups:
        if group.embed:
            layer = embeddings.get(group.name)
            if layer is None:
                raise ShapeError(f"no embedding layer for group {group.name}")
            if layer.n != group.dim:
                raise ShapeError(
                    f"embedding for {group.name} expects {layer.n} inputs, group has {group.dim}"
                )
            width += layer.m
        else:
            width += group.dim
    return width


def embed_sample(
    schema: FeatureSchema,
    embeddings: Mapping[str, EmbeddingLayer],
    sample: Sample,
    counter: OpCounter | None = None,
) -> StackingVector:
    """Embed each group, then concatenate; raw groups pass through."""
    if len(sample.fields) != len(schema.groups):
        raise ShapeError(
            f"sample has {len(sample.fields)} fields, schema has {len(schema.groups)}"
        )
    parts: list[np.ndarray] = []
    for group, value in zip(schema.groups, sample.fields):
        if group.embed:
            parts.append(embed_forward(value, embeddings[group.name], counter))
        elif isinstance(value, SparseVector):
            parts.append(value.to_dense())
        else:
            parts.append(np.asarray(value, dtype=np.float64))
    return stack(parts)


def predict_sample(model: DeepCrossingModel, sample: Sample) -> float:
    x = embed_sample(model.schema, model.embeddings, sample).values
    for unit in model.residual_units:
        x = residual_forward(x, unit)
    return score(x, model.w_s, float(model.b_s))


# ── Batched forward / backward ────────────────────────────────────────


def stacking_offsets(
    schema: FeatureSchema, embeddings: Mapping[str, EmbeddingLayer]
) -> tuple[int, ...]:
    offsets: list[int] = []
    position = 0
    for group in schema.groups:
        offsets.append(position)
        position += embeddings[group.name].m if group.embed else group.dim
    return tuple(offsets)


def embed_batch(
    schema: FeatureSchema,
    embeddings: Mapping[str, EmbeddingLayer],
    dataset: Dataset,
    rows: np.ndarray | None = None,
) -> tuple[np.ndarray, EmbedCache]:
    """Stacking vectors for *rows* (all samples when None) as a (B, D) matrix."""
    if dataset.schema != schema:
        raise ShapeError("dataset schema does not match the embedding schema")
    blocks: list[np.ndarray] = []
    cache = EmbedCache(inputs=[], pre=[])
    for j, group in enumerate(schema.groups):
        x = dataset.group_matrix(j, rows)
        cache.inputs.append(x)
        if group.embed:
            layer = embeddings[group.name]
            pre = np.asarray(x @ layer.W.T) + layer.b
            cache.pre.append(pre)
            blocks.append(np.maximum(pre, 0.0))
        else:
            cache.pre.append(None)
            blocks.append(x.toarray() if sp.issparse(x) else np.asarray(x))
    return np.hstack(blocks), cache


def embed_batch_backward(
    schema: FeatureSchema,
    embeddings: Mapping[str, EmbeddingLayer],
    cache: EmbedCache,
    d_stacked: np.ndarray,
) -> list[np.ndarray]:
    """Chain a stacking-vector gradient into [dW, db] per embedded group."""
    grads: list[np.ndarray] = []
    position = 0
    for j, group in enumerate(schema.groups):
        if not group.embed:
            position += group.dim
            continue
        layer = embeddings[group.name]
        d_out = d_stacked[:, position : position + layer.m]
        position += layer.m
        d_pre = d_out * (cache.pre[j] > 0.0)
        x = cache.inputs[j]
        grads.append(np.asarray(x.T @ d_pre).T)
        grads.append(d_pre.sum(axis=0))
    return grads


def forward_batch(
    model: DeepCrossingModel, dataset: Dataset, rows: np.ndarray | None = None
) -> ForwardCache:
    stacked, embed_cache = embed_batch(model.schema, model.embeddings, dataset, rows)
    x = stacked
    residual: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
    for unit in model.residual_units:
        hidden_pre = x @ unit.W1.T + unit.b1
        hidden = np.maximum(hidden_pre, 0.0)
        out_pre = x + hidden @ unit.W2.T + unit.b2
        residual.append((x, hidden_pre, out_pre))
        x = np.maximum(out_pre, 0.0)
    logits = x @ model.w_s + model.b_s
    return ForwardCache(embed_cache, stacked, residual, x, logits, expit(logits))


def backward_batch(
    model: DeepCrossingModel, cache: ForwardCache, labels: np.ndarray
) -> list[np.ndarray]:
    """Gradients of the mean log loss, aligned with `model.parameters()`."""
    batch = labels.shape[0]
    d_logits = (cache.probs - labels) / batch
    d_w_s = cache.top.T @ d_logits
    d_b_s = np.asarray(d_logits.sum())
    d_x = np.outer(d_logits, model.w_s)

    residual_grads: list[list[np.ndarray]] = []
    for unit, (x_in, hidden_pre, out_pre) in zip(
        reversed(model.residual_units), reversed(cache.residual)
    ):
        d_out_pre = d_x * (out_pre > 0.0)
        hidden = np.maximum(hidden_pre, 0.0)
        d_W2 = d_out_pre.T @ hidden
        d_b2 = d_out_pre.sum(axis=0)
        d_hidden_pre = (d_out_pre @ unit.W2) * (hidden_pre > 0.0)
        d_W1 = d_hidden_pre.T @ x_in
        d_b1 = d_hidden_pre.sum(axis=0)
        d_x = d_out_pre + d_hidden_pre @ unit.W1
        residual_grads.append([d_W1, d_b1, d_W2, d_b2])

    grads = embed_batch_backward(model.schema, model.embeddings, cache.embed, d_x)
    for unit_grads in reversed(residual_grads):
        grads.extend(unit_grads)
    grads.extend((d_w_s, d_b_s))
    return grads


def predict_proba(model: DeepCrossingModel, dataset: Dataset) -> np.ndarray:
    """Deep Crossing click probabilities (the baseline scorer)."""
    n = len(dataset)
    probs = np.empty(n)
    for start in range(0, n, PREDICT_CHUNK):
        rows = np.arange(start, min(start + PREDICT_CHUNK, n))
        probs[rows] = forward_batch(model, dataset, rows).probs
    return np.clip(probs, PROB_EPS, 1.0 - PROB_EPS)


# ── Training ──────────────────────────────────────────────────────────


def _rng_streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    init_seq, shuffle_seq = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init_seq), np.random.default_rng(shuffle_seq)


def init_deep_crossing(schema: FeatureSchema, config: TrainConfig) -> DeepCrossingModel:
    """Seeded Glorot-uniform initialization; biases start at zero."""
    rng, _ = _rng_streams(config.seed)
    embeddings: dict[str, EmbeddingLayer] = {}
    for group in schema.groups:
        if group.embed:
            embeddings[group.name] = EmbeddingLayer(
                glorot_uniform(rng, config.embed_dim, group.dim), np.zeros(config.embed_dim)
            )
    width = stacking_dim(schema, embeddings)
    units = [
        ResidualUnit(
            glorot_uniform(rng, hidden, width),
            np.zeros(hidden),
            glorot_uniform(rng, width, hidden),
            np.zeros(width),
        )
        for hidden in config.residual_hidden
    ]
    w_s = glorot_uniform(rng, 1, width)[0]
    return DeepCrossingModel(schema, embeddings, units, w_s, np.zeros(()))


def train_deep_crossing(dataset: Dataset, config: TrainConfig) -> DeepCrossingModel:
    """Mini-batch Adam on the mean log loss over every model parameter."""
    if len(dataset) == 0:
        raise ValidationError("cannot train on an empty dataset")
    model = init_deep_crossing(dataset.schema, config)
    _, shuffle_rng = _rng_streams(config.seed)
    params = model.parameters()
    optimizer = Adam(
        params,
        config.learning_rate,
        config.adam_beta1,
        config.adam_beta2,
        config.adam_eps,
        config.l2,
    )
    labels = dataset.labels
    n = len(dataset)
    # parameters of the most recent batch whose loss was finite
    good = optimizer.snapshot()
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            rows = order[start : start + config.batch_size]
            cache = forward_batch(model, dataset, rows)
            loss = mean_log_loss(cache.probs, labels[rows])
            if not math.isfinite(loss):
                _LOGGER.error("Deep Crossing loss diverged in epoch %d", epoch + 1)
                last_good = copy.deepcopy(model)
                load_parameters(last_good.parameters(), good)
                raise TrainingDivergedError(
                    f"non-finite loss in epoch {epoch + 1}; lower learning_rate "
                    f"(currently {config.learning_rate:g})",
                    last_good=last_good,
                )
            good = optimizer.snapshot()
            optimizer.step(backward_batch(model, cache, labels[rows]))
            total += loss * rows.size
        model.loss_history.append(total / n)
        _LOGGER.info(
            "Epoch %d/%d: train log loss %.6f", epoch + 1, config.epochs, total / n
        )
    return model


def extract_stacking(dataset: Dataset, model: DeepCrossingModel) -> StackedDataset:
    """Map every sample to its stacking vector using the embeddings only."""
    if dataset.schema != model.schema:
        raise ShapeError("dataset schema does not match the model schema")
    n = len(dataset)
    width = model.stacking_dim
    values = np.empty((n, width))
    for start in range(0, n, PREDICT_CHUNK):
        rows = np.arange(start, min(start + PREDICT_CHUNK, n))
        block, _ = embed_batch(model.schema, model.embeddings, dataset, rows)
        values[rows] = block
    return StackedDataset(
        dataset.labels.copy(), values, stacking_offsets(model.schema, model.embeddings)
    )


# ── Stacked dataset file ──────────────────────────────────────────────


def write_stacked(stacked: StackedDataset, stream: TextIO) -> None:
    for label, row in zip(stacked.labels, stacked.values):
        stream.write(f"{int(label)}\t{','.join(format_float(v) for v in row.tolist())}\n")


def read_stacked(lines: Iterable[str]) -> StackedDataset:
    labels: list[float] = []
    rows: list[list[float]] = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            continue
        label_text, sep, values_text = line.partition("\t")
        if not sep or label_text not in ("0", "1"):
            raise ParseError("expected '<label>\\t<v0>,<v1>,...'", lineno)
        try:
            row = [float(v) for v in values_text.split(",")]
        except ValueError as err:
            raise ParseError(f"bad stacking value: {err}", lineno) from err
        if not all(math.isfinite(v) for v in row):
            raise ParseError("non-finite stacking value", lineno)
        if rows and len(row) != len(rows[0]):
            raise ParseError(f"expected {len(rows[0])} values, got {len(row)}", lineno)
        labels.append(float(label_text))
        rows.append(row)
    if not rows:
        return StackedDataset(np.zeros(0), np.zeros((0, 0)))
    return StackedDataset(np.array(labels), np.array(rows, dtype=np.float64))


# ── Checkpoints ───────────────────────────────────────────────────────


def embedding_tensors(
    schema: FeatureSchema, embeddings: Mapping[str, EmbeddingLayer]
) -> dict[str, np.ndarray]:
    tensors: dict[str, np.ndarray] = {}
    for group in schema.groups:
        if group.embed:
            tensors[f"embed/{group.name}/W"] = embeddings[group.name].W
            tensors[f"embed/{group.name}/b"] = embeddings[group.name].b
    return tensors


def embeddings_from_tensors(
    schema: FeatureSchema, tensors: Mapping[str, np.ndarray]
) -> dict[str, EmbeddingLayer]:
    embeddings: dict[str, EmbeddingLayer] = {}
    for group in schema.groups:
        if not group.embed:
            continue
        try:
            layer = EmbeddingLayer(
                tensors[f"embed/{group.name}/W"], tensors[f"embed/{group.name}/b"]
            )
        except KeyError as err:
            raise ModelFormatError(f"missing tensor {err.args[0]}") from err
        except ShapeError as err:
            raise ModelFormatError(str(err)) from err
        embeddings[group.name] = layer
    stacking_dim(schema, embeddings)
    return embeddings


def save_checkpoint(
    model: DeepCrossingModel, path: Path | str, config: TrainConfig | None = None
) -> Path:
    """Write `tensors.bin` and a JSON manifest into the directory *path*."""
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    tensors = embedding_tensors(model.schema, model.embeddings)
    for k, unit in enumerate(model.residual_units):
        tensors[f"residual/{k}/W1"] = unit.W1
        tensors[f"residual/{k}/b1"] = unit.b1
        tensors[f"residual/{k}/W2"] = unit.W2
        tensors[f"residual/{k}/b2"] = unit.b2
    tensors["score/w"] = model.w_s
    tensors["score/b"] = model.b_s
    payload = pack_tensors(tensors)
    (directory / CHECKPOINT_TENSORS).write_bytes(payload)
    manifest = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "schema": serialize_schema(model.schema),
        "residual_units": len(model.residual_units),
        "tensors_sha256": sha256_bytes(payload),
        "loss_history": model.loss_history,
        "config": None if config is None else asdict(config),
    }
    (directory / CHECKPOINT_MANIFEST).write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    _LOGGER.info("Wrote checkpoint to %s", directory)
    return directory


def load_checkpoint(path: Path | str) -> DeepCrossingModel:
    directory = Path(path)
    try:
        manifest = json.loads((directory / CHECKPOINT_MANIFEST).read_text(encoding="utf-8"))
        payload = (directory / CHECKPOINT_TENSORS).read_bytes()
    except FileNotFoundError as err:
        raise ModelFormatError(f"incomplete checkpoint at {directory}: {err.filename}") from err
    except json.JSONDecodeError as err:
        raise ModelFormatError(f"unreadable checkpoint manifest: {err}") from err
    if manifest.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ModelFormatError(
            f"unsupported checkpoint version {manifest.get('format_version')!r}"
        )
    if sha256_bytes(payload) != manifest.get("tensors_sha256"):
        raise ModelFormatError("checkpoint tensors digest mismatch")
    schema = parse_schema(manifest["schema"])
    tensors = unpack_tensors(payload)
    embeddings = embeddings_from_tensors(schema, tensors)
    try:
        units = [
            ResidualUnit(
                tensors[f"residual/{k}/W1"],
                tensors[f"residual/{k}/b1"],
                tensors[f"residual/{k}/W2"],
                tensors[f"residual/{k}/b2"],
            )
            for k in range(int(manifest["residual_units"]))
        ]
        model = DeepCrossingModel(
            schema, embeddings, units, tensors["score/w"], tensors["score/b"]
        )
    except KeyError as err:
        raise ModelFormatError(f"missing tensor {err.args[0]}") from err
    except ShapeError as err:
        raise ModelFormatError(str(err)) from err
    model.loss_history = list(manifest.get("loss_history", []))
    return model
