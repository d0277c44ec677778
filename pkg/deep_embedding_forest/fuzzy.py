"""Partial fuzzification of a trained forest and joint refinement.

Every internal node r routes with s_r = sigmoid(c_r (y[f_r] - a_r)) to the
child the hard tree takes when y[f_r] >= a_r, and with 1 - s_r to the other
child. The structure and split features stay frozen; c, a, the leaf values
and the embeddings are trained.

Forward and backward passes work level by level over all trees at once:
node probabilities flow top-down, subtree values flow bottom-up, so both are
linear in the total node count.
"""

from __future__ import annotations

import copy
import logging
import math
from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.special import expit

from .common import OpCounter
from .const import (
    CONF_ADAM_BETA1,
    CONF_ADAM_BETA2,
    CONF_ADAM_EPS,
    CONF_BATCH_SIZE,
    CONF_EPOCHS,
    CONF_KAPPA,
    CONF_L2,
    CONF_LEARNING_RATE,
    DEFAULT_ADAM_BETA1,
    DEFAULT_ADAM_BETA2,
    DEFAULT_ADAM_EPS,
    DEFAULT_BATCH_SIZE,
    DEFAULT_FUZZY_EPOCHS,
    DEFAULT_FUZZY_LEARNING_RATE,
    DEFAULT_KAPPA,
    DEFAULT_L2,
    DEFAULT_SEED,
    FUZZY_FOREST_TAG,
    IQR_EPS,
    MIN_INVERSE_WIDTH,
    ROUTING_EXP_CLAMP,
)
from .data import Dataset, FeatureSchema
from .errors import ConfigError, ParseError, ShapeError, TrainingDivergedError, ValidationError
from .gbdt import (
    Forest,
    Tree,
    TreeNode,
    predict_hard_batch,
    read_forest_document,
    write_forest_document,
)
from .nn import (
    EmbeddingLayer,
    PREDICT_CHUNK,
    StackedDataset,
    StackingVector,
    embed_batch,
    embed_batch_backward,
    mean_log_loss,
)
from .optim import Adam, load_parameters

_LOGGER = logging.getLogger(__name__)


# ── Types ─────────────────────────────────────────────────────────────


@dataclass(frozen=True, eq=False)
class ForestLayout:
    """Flat view of a forest: global node ids, contiguous per tree."""

    n_nodes: int
    tree_offsets: np.ndarray
    internal: np.ndarray
    feature: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaves: np.ndarray
    roots: np.ndarray
    levels: tuple[np.ndarray, ...]
    internal_of_node: np.ndarray
    leaf_of_node: np.ndarray

    @property
    def n_internal(self) -> int:
        return int(self.internal.size)

    @property
    def n_leaves(self) -> int:
        return int(self.leaves.size)

    @classmethod
    def from_forest(cls, forest: Forest) -> ForestLayout:
        offsets = np.zeros(len(forest.trees) + 1, dtype=np.int64)
        for t, tree in enumerate(forest.trees):
            offsets[t + 1] = offsets[t] + len(tree.nodes)
        n_nodes = int(offsets[-1])
        internal: list[int] = []
        feature: list[int] = []
        left: list[int] = []
        right: list[int] = []
        depth: list[int] = []
        leaves: list[int] = []
        for t, tree in enumerate(forest.trees):
            base = int(offsets[t])
            stack = [(0, 0)]
            while stack:
                idx, d = stack.pop()
                node = tree.nodes[idx]
                if node.is_leaf:
                    leaves.append(base + idx)
                    continue
                internal.append(base + idx)
                feature.append(node.feature)
                left.append(base + node.left)
                right.append(base + node.right)
                depth.append(d)
                stack.append((node.right, d + 1))
                stack.append((node.left, d + 1))
        order = np.argsort(np.array(internal, dtype=np.int64), kind="stable")
        internal_arr = np.array(internal, dtype=np.int64)[order]
        depth_arr = np.array(depth, dtype=np.int64)[order]
        leaves_arr = np.sort(np.array(leaves, dtype=np.int64))
        internal_of_node = np.full(n_nodes, -1, dtype=np.int64)
        internal_of_node[internal_arr] = np.arange(internal_arr.size)
        leaf_of_node = np.full(n_nodes, -1, dtype=np.int64)
        leaf_of_node[leaves_arr] = np.arange(leaves_arr.size)
        levels = tuple(
            np.flatnonzero(depth_arr == d) for d in range(int(depth_arr.max()) + 1)
        ) if depth_arr.size else ()
        return cls(
            n_nodes=n_nodes,
            tree_offsets=offsets,
            internal=internal_arr,
            feature=np.array(feature, dtype=np.int64)[order],
            left=np.array(left, dtype=np.int64)[order],
            right=np.array(right, dtype=np.int64)[order],
            leaves=leaves_arr,
            roots=offsets[:-1].copy(),
            levels=levels,
            internal_of_node=internal_of_node,
            leaf_of_node=leaf_of_node,
        )


@dataclass(eq=False)
class FuzzyForest:
    """A frozen forest structure with trainable c, a (per internal node) and π (per leaf).

    `c`, `a` and `feature` follow `layout.internal`; `pi` follows
    `layout.leaves`.
    """

    structure: Forest
    c: np.ndarray
    a: np.ndarray
    pi: np.ndarray
    layout: ForestLayout = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.layout = ForestLayout.from_forest(self.structure)
        self.c = np.array(self.c, dtype=np.float64)
        self.a = np.array(self.a, dtype=np.float64)
        self.pi = np.array(self.pi, dtype=np.float64)
        n_int = self.layout.n_internal
        if self.c.shape != (n_int,) or self.a.shape != (n_int,):
            raise ShapeError(f"expected {n_int} inverse widths and split values")
        if self.pi.shape != (self.layout.n_leaves,):
            raise ShapeError(f"expected {self.layout.n_leaves} leaf values")
        if not (np.all(np.isfinite(self.c)) and np.all(self.c > 0.0)):
            raise ValidationError("inverse widths must be positive and finite")

    @classmethod
    def from_forest(cls, forest: Forest, c: np.ndarray | float = 1.0) -> FuzzyForest:
        """a and π copied from the hard forest; c broadcast when scalar."""
        layout = ForestLayout.from_forest(forest)
        thresholds = np.empty(layout.n_internal)
        values = np.empty(layout.n_leaves)
        for t, tree in enumerate(forest.trees):
            base = int(layout.tree_offsets[t])
            for idx, node in enumerate(tree.nodes):
                if node.is_leaf:
                    values[layout.leaf_of_node[base + idx]] = node.value
                else:
                    thresholds[layout.internal_of_node[base + idx]] = node.threshold
        widths = np.broadcast_to(np.asarray(c, dtype=np.float64), thresholds.shape).copy()
        return cls(forest, widths, thresholds, values)

    @property
    def feature(self) -> np.ndarray:
        return self.layout.feature

    @property
    def base_score(self) -> float:
        return self.structure.base_score

    @property
    def learning_rate(self) -> float:
        return self.structure.learning_rate

    def __len__(self) -> int:
        return len(self.structure.trees)

    def max_feature(self) -> int:
        return self.structure.max_feature()

    def parameters(self) -> list[np.ndarray]:
        return [self.c, self.a, self.pi]

    def with_widths(self, c: np.ndarray) -> FuzzyForest:
        return FuzzyForest(self.structure, c, self.a.copy(), self.pi.copy())

    def to_hard(self) -> Forest:
        """Refined split values and leaf values on the frozen structure."""
        layout = self.layout
        trees: list[Tree] = []
        for t, tree in enumerate(self.structure.trees):
            base = int(layout.tree_offsets[t])
            nodes: list[TreeNode] = []
            for idx, node in enumerate(tree.nodes):
                if node.is_leaf:
                    nodes.append(TreeNode.leaf(float(self.pi[layout.leaf_of_node[base + idx]])))
                else:
                    nodes.append(
                        TreeNode.split(
                            node.feature,
                            float(self.a[layout.internal_of_node[base + idx]]),
                            node.left,
                            node.right,
                        )
                    )
            trees.append(Tree(tuple(nodes)))
        return Forest(tuple(trees), self.base_score, self.learning_rate)

    def node_widths(self) -> list[np.ndarray]:
        """Per-tree arrays of c indexed by local node id (0 at leaves)."""
        per_node = np.zeros(self.layout.n_nodes)
        per_node[self.layout.internal] = self.c
        offsets = self.layout.tree_offsets
        return [per_node[offsets[t] : offsets[t + 1]] for t in range(len(self))]


@dataclass
class RoutingProbs:
    """Routing probabilities; a leading batch axis is present for batches.

    `mu_left` is σ(c(y − a)) per internal node, bound to the `y >= a`
    child; `mu_right` is its complement. `node` holds the path product of
    every node and `leaf` the path product of every leaf.
    """

    mu_left: np.ndarray
    mu_right: np.ndarray
    node: np.ndarray
    leaf: np.ndarray


@dataclass(frozen=True)
class FuzzyOutput:
    raw: float | np.ndarray
    probs: RoutingProbs


@dataclass
class FuzzyGradients:
    d_pi: np.ndarray
    d_c: np.ndarray
    d_a: np.ndarray
    d_y: np.ndarray


@dataclass(frozen=True)
class ComplexityStats:
    n_t: int
    d_t: float
    l_t: float
    ratio: float


@dataclass(frozen=True)
class FuzzyConfig:
    kappa: float = DEFAULT_KAPPA
    epochs: int = DEFAULT_FUZZY_EPOCHS
    batch_size: int = DEFAULT_BATCH_SIZE
    learning_rate: float = DEFAULT_FUZZY_LEARNING_RATE
    adam_beta1: float = DEFAULT_ADAM_BETA1
    adam_beta2: float = DEFAULT_ADAM_BETA2
    adam_eps: float = DEFAULT_ADAM_EPS
    seed: int = DEFAULT_SEED
    l2: float = DEFAULT_L2

    def __post_init__(self) -> None:
        if not self.kappa > 0.0:
            raise ConfigError("kappa must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if not self.learning_rate >= 0.0:
            raise ConfigError("learning_rate must be non-negative")

    @classmethod
    def from_mapping(cls, section: Mapping[str, Any], seed: int) -> FuzzyConfig:
        return cls(
            kappa=section[CONF_KAPPA],
            epochs=section[CONF_EPOCHS],
            batch_size=section[CONF_BATCH_SIZE],
            learning_rate=section[CONF_LEARNING_RATE],
            adam_beta1=section[CONF_ADAM_BETA1],
            adam_beta2=section[CONF_ADAM_BETA2],
            adam_eps=section[CONF_ADAM_EPS],
            seed=seed,
            l2=section[CONF_L2],
        )


@dataclass
class JointTrainResult:
    embeddings: dict[str, EmbeddingLayer]
    fuzzy: FuzzyForest
    initial_hard_loss: float
    initial_fuzzy_loss: float
    final_loss: float
    epoch_losses: list[float] = field(default_factory=list)


# ── Routing ───────────────────────────────────────────────────────────


def node_routing(c_r: float, a_r: float, y_r: float) -> tuple[float, float]:
    """(μ^L, μ^R) of one node; the exponent argument is clamped to ±500."""
    z = min(max(c_r * (y_r - a_r), -ROUTING_EXP_CLAMP), ROUTING_EXP_CLAMP)
    mu_left = 1.0 / (1.0 + math.exp(-z))
    return mu_left, 1.0 - mu_left


def _as_matrix(forest: FuzzyForest, Y: np.ndarray) -> np.ndarray:
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2 or forest.max_feature() >= Y.shape[1]:
        raise ShapeError(f"stacking input of shape {Y.shape} does not fit the forest")
    return Y


def fuzzy_forward_batch(forest: FuzzyForest, Y: np.ndarray) -> FuzzyOutput:
    Y = _as_matrix(forest, Y)
    layout = forest.layout
    batch = Y.shape[0]
    z = np.clip(forest.c * (Y[:, layout.feature] - forest.a), -ROUTING_EXP_CLAMP, ROUTING_EXP_CLAMP)
    mu_left = expit(z)
    mu_right = 1.0 - mu_left
    node = np.zeros((batch, layout.n_nodes))
    node[:, layout.roots] = 1.0
    for level in layout.levels:
        parent = node[:, layout.internal[level]]
        node[:, layout.right[level]] = parent * mu_left[:, level]
        node[:, layout.left[level]] = parent * mu_right[:, level]
    leaf = node[:, layout.leaves]
    raw = forest.base_score + forest.learning_rate * (leaf @ forest.pi)
    return FuzzyOutput(raw, RoutingProbs(mu_left, mu_right, node, leaf))


def fuzzy_backward_batch(
    forest: FuzzyForest, Y: np.ndarray, probs: RoutingProbs, delta: np.ndarray
) -> FuzzyGradients:
    """Gradients of Σ_b δ_b t̄_b; d_y keeps the batch axis."""
    Y = _as_matrix(forest, Y)
    layout = forest.layout
    batch = Y.shape[0]
    if probs.node.shape != (batch, layout.n_nodes) or probs.mu_left.shape != (
        batch,
        layout.n_internal,
    ):
        raise ShapeError("routing probabilities do not match this forest and batch")
    delta = np.asarray(delta, dtype=np.float64).reshape(batch)
    mu_left = probs.mu_left

    subtree = np.zeros((batch, layout.n_nodes))
    subtree[:, layout.leaves] = forest.pi
    for level in reversed(layout.levels):
        subtree[:, layout.internal[level]] = (
            mu_left[:, level] * subtree[:, layout.right[level]]
            + probs.mu_right[:, level] * subtree[:, layout.left[level]]
        )

    scale = forest.learning_rate * delta[:, None]
    slope = mu_left * probs.mu_right
    weight = (
        scale
        * probs.node[:, layout.internal]
        * (subtree[:, layout.right] - subtree[:, layout.left])
        * slope
    )
    d_c = np.sum(weight * (Y[:, layout.feature] - forest.a), axis=0)
    d_a = np.sum(weight, axis=0) * -forest.c
    d_y = np.zeros_like(Y)
    np.add.at(d_y.T, layout.feature, (weight * forest.c).T)
    d_pi = np.sum(scale * probs.leaf, axis=0)
    return FuzzyGradients(d_pi, d_c, d_a, d_y)


def _as_vector(y: StackingVector | np.ndarray) -> np.ndarray:
    values = y.values if isinstance(y, StackingVector) else np.asarray(y, dtype=np.float64)
    if values.ndim != 1:
        raise ShapeError(f"expected a stacking vector, got shape {values.shape}")
    return values


def fuzzy_forward(
    forest: FuzzyForest, y: StackingVector | np.ndarray, counter: OpCounter | None = None
) -> FuzzyOutput:
    """t̄ = base_score + ν Σ_l π_l μ_l over all leaves of all trees."""
    out = fuzzy_forward_batch(forest, _as_vector(y)[None, :])
    if counter is not None:
        counter.node_visits += forest.layout.n_nodes
    probs = out.probs
    return FuzzyOutput(
        float(out.raw[0]),
        RoutingProbs(probs.mu_left[0], probs.mu_right[0], probs.node[0], probs.leaf[0]),
    )


def fuzzy_backward(
    forest: FuzzyForest,
    y: StackingVector | np.ndarray,
    probs: RoutingProbs,
    delta: float,
) -> FuzzyGradients:
    values = _as_vector(y)
    if probs.node.shape != (forest.layout.n_nodes,):
        raise ShapeError("routing probabilities are stale for this forest")
    batched = RoutingProbs(
        probs.mu_left[None, :], probs.mu_right[None, :], probs.node[None, :], probs.leaf[None, :]
    )
    grads = fuzzy_backward_batch(forest, values[None, :], batched, np.array([delta]))
    grads.d_y = grads.d_y[0]
    return grads


# ── Initialization ────────────────────────────────────────────────────


def init_fuzzy(forest: Forest, stacked: StackedDataset, kappa: float) -> FuzzyForest:
    """c_r = kappa / max(IQR of feature f_r, 1e-6); a and π from the forest."""
    if len(stacked) == 0:
        raise ValidationError("cannot initialize inverse widths from an empty dataset")
    if not kappa > 0.0:
        raise ConfigError("kappa must be positive")
    fuzzy = FuzzyForest.from_forest(forest)
    if fuzzy.max_feature() >= stacked.dim:
        raise ShapeError("forest splits on features beyond the stacking width")
    used = np.unique(fuzzy.feature)
    q75, q25 = np.percentile(stacked.values[:, used], [75.0, 25.0], axis=0)
    spread = dict(zip(used.tolist(), np.maximum(q75 - q25, IQR_EPS).tolist()))
    fuzzy.c[:] = [kappa / spread[f] for f in fuzzy.feature.tolist()]
    _LOGGER.debug("Initialized %d inverse widths (kappa=%g)", fuzzy.c.size, kappa)
    return fuzzy


# ── Joint training ────────────────────────────────────────────────────


def _chunked_losses(
    schema: FeatureSchema,
    embeddings: Mapping[str, EmbeddingLayer],
    forest: FuzzyForest,
    dataset: Dataset,
) -> tuple[float, float]:
    """(hard, fuzzy) mean train log loss over the whole dataset."""
    n = len(dataset)
    hard_raw = np.empty(n)
    fuzzy_raw = np.empty(n)
    hard = forest.to_hard()
    for start in range(0, n, PREDICT_CHUNK):
        rows = np.arange(start, min(start + PREDICT_CHUNK, n))
        Y, _ = embed_batch(schema, embeddings, dataset, rows)
        hard_raw[rows] = predict_hard_batch(hard, Y)
        fuzzy_raw[rows] = fuzzy_forward_batch(forest, Y).raw
    labels = dataset.labels
    return mean_log_loss(expit(hard_raw), labels), mean_log_loss(expit(fuzzy_raw), labels)


def _joint_parameters(
    schema: FeatureSchema, embeddings: Mapping[str, EmbeddingLayer], forest: FuzzyForest
) -> list[np.ndarray]:
    """Embedding W, b per embedded group, then c, a, π."""
    params: list[np.ndarray] = []
    for group in schema.groups:
        if group.embed:
            params.extend((embeddings[group.name].W, embeddings[group.name].b))
    return params + forest.parameters()


def joint_train(
    dataset: Dataset,
    embeddings: Mapping[str, EmbeddingLayer],
    forest: FuzzyForest,
    config: FuzzyConfig,
) -> JointTrainResult:
    """Adam over the embeddings and c, a, π; inputs are left untouched."""
    if len(dataset) == 0:
        raise ValidationError("cannot train on an empty dataset")
    schema = dataset.schema
    embeddings = copy.deepcopy(dict(embeddings))
    forest = FuzzyForest(forest.structure, forest.c, forest.a, forest.pi)
    initial_hard, initial_fuzzy = _chunked_losses(schema, embeddings, forest, dataset)
    _LOGGER.info(
        "Joint training from two-step loss %.6f (fuzzy %.6f)", initial_hard, initial_fuzzy
    )

    optimizer = Adam(
        _joint_parameters(schema, embeddings, forest),
        config.learning_rate,
        config.adam_beta1,
        config.adam_beta2,
        config.adam_eps,
        config.l2,
    )
    shuffle_rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(3)[2])
    labels = dataset.labels
    n = len(dataset)
    epoch_losses: list[float] = []
    good = optimizer.snapshot()
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            rows = order[start : start + config.batch_size]
            Y, cache = embed_batch(schema, embeddings, dataset, rows)
            out = fuzzy_forward_batch(forest, Y)
            p = expit(out.raw)
            loss = mean_log_loss(p, labels[rows])
            if not math.isfinite(loss):
                _LOGGER.error("Joint training diverged in epoch %d", epoch + 1)
                good_embeddings = copy.deepcopy(embeddings)
                good_forest = FuzzyForest(forest.structure, good[-3], good[-2], good[-1])
                load_parameters(
                    _joint_parameters(schema, good_embeddings, good_forest), good
                )
                raise TrainingDivergedError(
                    f"non-finite loss in epoch {epoch + 1}; lower the fuzzy learning_rate "
                    f"(currently {config.learning_rate:g})",
                    last_good=(good_embeddings, good_forest),
                )
            good = optimizer.snapshot()
            delta = (p - labels[rows]) / rows.size
            grads = fuzzy_backward_batch(forest, Y, out.probs, delta)
            embed_grads = embed_batch_backward(schema, embeddings, cache, grads.d_y)
            optimizer.step(embed_grads + [grads.d_c, grads.d_a, grads.d_pi])
            np.maximum(forest.c, MIN_INVERSE_WIDTH, out=forest.c)
            total += loss * rows.size
        epoch_losses.append(total / n)
        _LOGGER.info("Fuzzy epoch %d/%d: train log loss %.6f", epoch + 1, config.epochs, total / n)

    _, final_fuzzy = _chunked_losses(schema, embeddings, forest, dataset)
    return JointTrainResult(
        embeddings, forest, initial_hard, initial_fuzzy, final_fuzzy, epoch_losses
    )


# ── Structure statistics ──────────────────────────────────────────────


def complexity_stats(forest: Forest | FuzzyForest) -> ComplexityStats:
    """n_t, mean leaf depth d_t, mean node count l_t and l_t / max(d_t, 1)."""
    hard = forest.structure if isinstance(forest, FuzzyForest) else forest
    if not hard.trees:
        raise ValidationError("complexity of an empty forest is undefined")
    depths = [float(np.mean(tree.leaf_depths())) for tree in hard.trees]
    sizes = [len(tree.nodes) for tree in hard.trees]
    d_t = float(np.mean(depths))
    l_t = float(np.mean(sizes))
    return ComplexityStats(len(hard.trees), d_t, l_t, l_t / max(d_t, 1.0))


# ── Document ──────────────────────────────────────────────────────────


def export_fuzzy_forest(forest: FuzzyForest) -> str:
    return write_forest_document(forest.to_hard(), FUZZY_FOREST_TAG, forest.node_widths())


def import_fuzzy_forest(text: str) -> FuzzyForest:
    hard, widths = read_forest_document(text, FUZZY_FOREST_TAG)
    fuzzy = FuzzyForest.from_forest(hard)
    per_node = np.concatenate(widths) if widths else np.zeros(0)
    c = per_node[fuzzy.layout.internal]
    if not np.all(c > 0.0):
        raise ParseError("inverse widths must be positive")
    return FuzzyForest(hard, c, fuzzy.a, fuzzy.pi)
