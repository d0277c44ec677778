"""Second-order gradient boosted trees over stacking vectors.

Trees grow leaf-wise (best gain first) with exact greedy splits. Each node
keeps, per feature, its rows in ascending feature order; splitting a node
partitions those orders stably so no column is re-sorted below the root.
"""

from __future__ import annotations

import heapq
import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any

import numpy as np
from numba import njit, prange
from scipy.special import expit

from .common import OpCounter, _coerce_finite_float, format_float, logit
from .const import (
    CONF_BASE_SCORE,
    CONF_LAMBDA,
    CONF_LEARNING_RATE,
    CONF_MAX_DEPTH,
    CONF_MAX_LEAVES,
    CONF_MIN_SAMPLES_LEAF,
    CONF_N_TREES,
    DEFAULT_GBDT_LEARNING_RATE,
    DEFAULT_LAMBDA,
    DEFAULT_MAX_DEPTH,
    DEFAULT_MAX_LEAVES,
    DEFAULT_MIN_SAMPLES_LEAF,
    DEFAULT_N_TREES,
    FOREST_FORMAT_VERSION,
    FOREST_TAG,
)
from .errors import ConfigError, ParseError, ShapeError, ValidationError
from .nn import StackedDataset, mean_log_loss

_LOGGER = logging.getLogger(__name__)


# ── Types ─────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class TreeNode:
    """Internal node (feature >= 0) or leaf (feature == -1)."""

    feature: int = -1
    threshold: float = 0.0
    left: int = -1
    right: int = -1
    value: float = 0.0

    @classmethod
    def leaf(cls, value: float) -> TreeNode:
        return cls(value=value)

    @classmethod
    def split(cls, feature: int, threshold: float, left: int, right: int) -> TreeNode:
        return cls(feature=feature, threshold=threshold, left=left, right=right)

    @property
    def is_leaf(self) -> bool:
        return self.feature < 0


def structure_problem(nodes: Sequence[TreeNode]) -> str | None:
    """Describe the first structural defect of a node array, or None."""
    n = len(nodes)
    if n == 0:
        return "tree has no nodes"
    parent = [-1] * n
    for idx, node in enumerate(nodes):
        if node.is_leaf:
            if not math.isfinite(node.value):
                return f"leaf {idx} has a non-finite value"
            continue
        if not math.isfinite(node.threshold):
            return f"node {idx} has a non-finite threshold"
        for child in (node.left, node.right):
            if child < 0 or child >= n:
                return f"node {idx} has child {child} out of range"
            if child == 0 or parent[child] != -1:
                return f"node {idx} points at child {child} that already has a parent"
            parent[child] = idx
    reached = 0
    stack = [0]
    while stack:
        idx = stack.pop()
        reached += 1
        if not nodes[idx].is_leaf:
            stack.extend((nodes[idx].right, nodes[idx].left))
    if reached != n:
        return f"{n - reached} nodes are unreachable from the root"
    return None


@dataclass(frozen=True)
class Tree:
    nodes: tuple[TreeNode, ...]

    def __post_init__(self) -> None:
        problem = structure_problem(self.nodes)
        if problem is not None:
            raise ValidationError(problem)

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def n_leaves(self) -> int:
        return sum(1 for node in self.nodes if node.is_leaf)

    def leaf_depths(self) -> list[int]:
        depths: list[int] = []
        stack = [(0, 0)]
        while stack:
            idx, depth = stack.pop()
            node = self.nodes[idx]
            if node.is_leaf:
                depths.append(depth)
            else:
                stack.append((node.right, depth + 1))
                stack.append((node.left, depth + 1))
        return depths

    @property
    def depth(self) -> int:
        return max(self.leaf_depths())

    @cached_property
    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(feature, threshold, left, right, value) as flat arrays."""
        feature = np.array([n.feature for n in self.nodes], dtype=np.int64)
        threshold = np.array([n.threshold for n in self.nodes], dtype=np.float64)
        left = np.array([n.left for n in self.nodes], dtype=np.int64)
        right = np.array([n.right for n in self.nodes], dtype=np.int64)
        value = np.array([n.value for n in self.nodes], dtype=np.float64)
        return feature, threshold, left, right, value

    def preorder(self) -> Tree:
        """Renumber nodes so ids follow a root-left-right walk."""
        order: list[int] = []
        stack = [0]
        while stack:
            idx = stack.pop()
            order.append(idx)
            node = self.nodes[idx]
            if not node.is_leaf:
                stack.extend((node.right, node.left))
        new_id = {old: new for new, old in enumerate(order)}
        renumbered = []
        for old in order:
            node = self.nodes[old]
            if node.is_leaf:
                renumbered.append(node)
            else:
                renumbered.append(
                    TreeNode.split(node.feature, node.threshold, new_id[node.left], new_id[node.right])
                )
        return Tree(tuple(renumbered))


@dataclass(frozen=True)
class Forest:
    trees: tuple[Tree, ...]
    base_score: float
    learning_rate: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.base_score) and math.isfinite(self.learning_rate)):
            raise ValidationError("base_score and learning_rate must be finite")

    def __len__(self) -> int:
        return len(self.trees)

    def max_feature(self) -> int:
        """Largest feature index used by any split, -1 for stumps only."""
        return max(
            (n.feature for tree in self.trees for n in tree.nodes if not n.is_leaf),
            default=-1,
        )

    def n_leaves(self) -> int:
        return sum(tree.n_leaves for tree in self.trees)


@dataclass(frozen=True)
class GbdtConfig:
    n_trees: int = DEFAULT_N_TREES
    max_leaves: int = DEFAULT_MAX_LEAVES
    max_depth: int = DEFAULT_MAX_DEPTH
    min_samples_leaf: int = DEFAULT_MIN_SAMPLES_LEAF
    lambda_: float = DEFAULT_LAMBDA
    learning_rate: float = DEFAULT_GBDT_LEARNING_RATE
    base_score: float | None = None

    def __post_init__(self) -> None:
        if self.n_trees < 1:
            raise ConfigError("n_trees must be at least 1")
        if self.max_leaves < 2:
            raise ConfigError("max_leaves must be at least 2")
        if self.max_depth < 1 or self.min_samples_leaf < 1:
            raise ConfigError("max_depth and min_samples_leaf must be positive")
        if not self.lambda_ >= 0.0:
            raise ConfigError("lambda must be non-negative")
        if not self.learning_rate > 0.0:
            raise ConfigError("learning_rate must be positive")

    @classmethod
    def from_mapping(cls, section: Mapping[str, Any]) -> GbdtConfig:
        return cls(
            n_trees=section[CONF_N_TREES],
            max_leaves=section[CONF_MAX_LEAVES],
            max_depth=section[CONF_MAX_DEPTH],
            min_samples_leaf=section[CONF_MIN_SAMPLES_LEAF],
            lambda_=section[CONF_LAMBDA],
            learning_rate=section[CONF_LEARNING_RATE],
            base_score=section.get(CONF_BASE_SCORE),
        )


@dataclass(frozen=True)
class SplitCandidate:
    threshold: float
    gain: float
    feature: int = 0


# ── Split search kernels ──────────────────────────────────────────────


@njit(cache=True)
def _gain_term(g_sum: float, h_sum: float, lam: float) -> float:
    denom = h_sum + lam
    if denom <= 0.0:
        return 0.0
    return g_sum * g_sum / denom


@njit(cache=True)
def _scan_sorted(values, g, h, lam, min_samples_leaf):
    """Best (gain, threshold) over midpoints of ascending *values*."""
    n = values.shape[0]
    g_total = 0.0
    h_total = 0.0
    for i in range(n):
        g_total += g[i]
        h_total += h[i]
    parent = _gain_term(g_total, h_total, lam)
    best_gain = -np.inf
    best_threshold = np.nan
    g_left = 0.0
    h_left = 0.0
    for i in range(n - 1):
        g_left += g[i]
        h_left += h[i]
        if values[i] == values[i + 1]:
            continue
        if i + 1 < min_samples_leaf or n - i - 1 < min_samples_leaf:
            continue
        gain = (
            _gain_term(g_left, h_left, lam)
            + _gain_term(g_total - g_left, h_total - h_left, lam)
            - parent
        )
        if gain > best_gain:
            threshold = values[i] + (values[i + 1] - values[i]) * 0.5
            if threshold <= values[i]:
                threshold = values[i + 1]
            best_gain = gain
            best_threshold = threshold
    return best_gain, best_threshold


@njit(cache=True, parallel=True)
def _node_split(X, order, g, h, lam, min_samples_leaf):
    """Best split of one node; *order* holds the node rows sorted per feature."""
    n_features, n_rows = order.shape
    gains = np.full(n_features, -np.inf)
    thresholds = np.full(n_features, np.nan)
    for f in prange(n_features):
        values = np.empty(n_rows)
        g_sorted = np.empty(n_rows)
        h_sorted = np.empty(n_rows)
        for i in range(n_rows):
            row = order[f, i]
            values[i] = X[row, f]
            g_sorted[i] = g[row]
            h_sorted[i] = h[row]
        gain, threshold = _scan_sorted(values, g_sorted, h_sorted, lam, min_samples_leaf)
        gains[f] = gain
        thresholds[f] = threshold
    best = -1
    for f in range(n_features):
        if gains[f] > -np.inf and (best < 0 or gains[f] > gains[best]):
            best = f
    if best < 0:
        return -1, np.nan, -np.inf
    return best, thresholds[best], gains[best]


@njit(cache=True)
def _partition(order, goes_left, n_left):
    n_features, n_rows = order.shape
    left = np.empty((n_features, n_left), dtype=order.dtype)
    right = np.empty((n_features, n_rows - n_left), dtype=order.dtype)
    for f in range(n_features):
        li = 0
        ri = 0
        for i in range(n_rows):
            row = order[f, i]
            if goes_left[row]:
                left[f, li] = row
                li += 1
            else:
                right[f, ri] = row
                ri += 1
    return left, right


def best_split(
    values: np.ndarray,
    g: np.ndarray,
    h: np.ndarray,
    lambda_: float,
    min_samples_leaf: int = 1,
) -> SplitCandidate | None:
    """Exact greedy split of one feature; None when no distinct values exist."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape[0] < 2:
        return None
    order = np.argsort(values, kind="stable")
    gain, threshold = _scan_sorted(
        values[order],
        np.asarray(g, dtype=np.float64)[order],
        np.asarray(h, dtype=np.float64)[order],
        float(lambda_),
        int(min_samples_leaf),
    )
    if gain == -np.inf:
        return None
    return SplitCandidate(float(threshold), float(gain))


# ── Training ──────────────────────────────────────────────────────────


@dataclass
class _GrowNode:
    depth: int
    order: np.ndarray
    g_sum: float
    h_sum: float
    feature: int = -1
    threshold: float = 0.0
    left: int = -1
    right: int = -1
    candidate: SplitCandidate | None = field(default=None, repr=False)

    @property
    def rows(self) -> np.ndarray:
        return self.order[0]


def _leaf_value(g_sum: float, h_sum: float, lam: float) -> float:
    denom = h_sum + lam
    if denom <= 0.0:
        return 0.0
    return -g_sum / denom


def _make_node(
    X: np.ndarray, order: np.ndarray, g: np.ndarray, h: np.ndarray, depth: int,
    config: GbdtConfig, splittable: bool,
) -> _GrowNode:
    rows = order[0]
    node = _GrowNode(depth, order, float(g[rows].sum()), float(h[rows].sum()))
    if (
        splittable
        and depth < config.max_depth
        and rows.size >= 2 * config.min_samples_leaf
    ):
        feature, threshold, gain = _node_split(
            X, order, g, h, config.lambda_, config.min_samples_leaf
        )
        if feature >= 0 and gain > 0.0:
            node.candidate = SplitCandidate(float(threshold), float(gain), int(feature))
    return node


def _grow_tree(
    X: np.ndarray,
    root_order: np.ndarray,
    g: np.ndarray,
    h: np.ndarray,
    config: GbdtConfig,
    splittable: bool,
) -> tuple[Tree, list[tuple[np.ndarray, float]]]:
    nodes = [_make_node(X, root_order, g, h, 0, config, splittable)]
    heap: list[tuple[float, int]] = []
    if nodes[0].candidate is not None:
        heap.append((-nodes[0].candidate.gain, 0))
    n_leaves = 1
    goes_left = np.zeros(X.shape[0], dtype=np.bool_)
    while heap and n_leaves < config.max_leaves:
        _, idx = heapq.heappop(heap)
        parent = nodes[idx]
        split = parent.candidate
        rows = parent.rows
        mask = X[rows, split.feature] < split.threshold
        goes_left[rows] = mask
        left_order, right_order = _partition(parent.order, goes_left, int(mask.sum()))
        goes_left[rows] = False
        parent.feature = split.feature
        parent.threshold = split.threshold
        parent.order = parent.order[:1, :0]
        for child_order in (left_order, right_order):
            child = _make_node(X, child_order, g, h, parent.depth + 1, config, splittable)
            child_id = len(nodes)
            nodes.append(child)
            if child.candidate is not None:
                heapq.heappush(heap, (-child.candidate.gain, child_id))
        parent.left = len(nodes) - 2
        parent.right = len(nodes) - 1
        n_leaves += 1
        _LOGGER.debug(
            "Split node %d on feature %d at %s (gain %.6g)",
            idx, split.feature, format_float(split.threshold), split.gain,
        )

    tree_nodes: list[TreeNode] = []
    partitions: list[tuple[np.ndarray, float]] = []
    for node in nodes:
        if node.feature >= 0:
            tree_nodes.append(TreeNode.split(node.feature, node.threshold, node.left, node.right))
        else:
            value = _leaf_value(node.g_sum, node.h_sum, config.lambda_)
            tree_nodes.append(TreeNode.leaf(value))
            partitions.append((node.rows, value))
    return Tree(tuple(tree_nodes)).preorder(), partitions


def train_gbdt(stacked: StackedDataset, config: GbdtConfig) -> Forest:
    """Boost `config.n_trees` trees on the logistic loss of (t_i, ỹ_i) pairs."""
    n = len(stacked)
    if n == 0:
        raise ValidationError("cannot train a forest on an empty dataset")
    labels = stacked.labels
    if not np.all((labels == 0.0) | (labels == 1.0)):
        raise ValidationError("labels must be 0 or 1")
    X = np.ascontiguousarray(stacked.values, dtype=np.float64)
    if X.shape[1] == 0:
        raise ShapeError("stacking vectors have no dimensions")
    base = config.base_score if config.base_score is not None else logit(float(labels.mean()))
    splittable = bool(labels.min() != labels.max())
    if not splittable:
        _LOGGER.warning("All %d labels are equal; every tree will be a single leaf", n)
    root_order = np.ascontiguousarray(
        np.argsort(X, axis=0, kind="stable").T.astype(np.int32)
    )
    acc = np.zeros(n)
    trees: list[Tree] = []
    for round_idx in range(config.n_trees):
        p = expit(base + config.learning_rate * acc)
        g = p - labels
        h = p * (1.0 - p)
        tree, partitions = _grow_tree(X, root_order, g, h, config, splittable)
        for rows, value in partitions:
            acc[rows] += value
        trees.append(tree)
        if _LOGGER.isEnabledFor(logging.INFO):
            loss = mean_log_loss(expit(base + config.learning_rate * acc), labels)
            _LOGGER.info(
                "Round %d/%d: %d leaves, train log loss %.6f",
                round_idx + 1, config.n_trees, tree.n_leaves, loss,
            )
    return Forest(tuple(trees), float(base), float(config.learning_rate))


# ── Prediction ────────────────────────────────────────────────────────


def predict_hard(
    forest: Forest, y: np.ndarray, counter: OpCounter | None = None
) -> float:
    """base_score + ν Σ reached leaf values; go left iff y[feature] < threshold."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1 or forest.max_feature() >= y.shape[0]:
        raise ShapeError(
            f"stacking vector of shape {y.shape} is too short for feature {forest.max_feature()}"
        )
    acc = 0.0
    for tree in forest.trees:
        node = tree.nodes[0]
        while not node.is_leaf:
            if counter is not None:
                counter.node_visits += 1
            node = tree.nodes[node.left if y[node.feature] < node.threshold else node.right]
        acc += node.value
    return forest.base_score + forest.learning_rate * acc


def predict_hard_batch(forest: Forest, Y: np.ndarray) -> np.ndarray:
    """Raw scores for each row of *Y*, bit-identical to `predict_hard`."""
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2 or forest.max_feature() >= Y.shape[1]:
        raise ShapeError(f"stacking matrix of shape {Y.shape} does not fit the forest")
    n = Y.shape[0]
    samples = np.arange(n)
    acc = np.zeros(n)
    for tree in forest.trees:
        feature, threshold, left, right, value = tree.arrays
        node = np.zeros(n, dtype=np.int64)
        while True:
            feat = feature[node]
            internal = feat >= 0
            if not internal.any():
                break
            go_left = Y[samples, np.where(internal, feat, 0)] < threshold[node]
            node = np.where(internal, np.where(go_left, left[node], right[node]), node)
        acc += value[node]
    return forest.base_score + forest.learning_rate * acc


# ── Forest document ───────────────────────────────────────────────────


def write_forest_document(
    forest: Forest, tag: str = FOREST_TAG, widths: Sequence[np.ndarray] | None = None
) -> str:
    """Render a forest; *widths* adds a per-internal-node `c` column."""
    lines = [
        f"{tag} v{FOREST_FORMAT_VERSION}",
        f"n_trees {len(forest.trees)}",
        f"base_score {format_float(forest.base_score)}",
        f"learning_rate {format_float(forest.learning_rate)}",
    ]
    for t, tree in enumerate(forest.trees):
        lines.append(f"tree {t} {len(tree.nodes)}")
        for idx, node in enumerate(tree.nodes):
            if node.is_leaf:
                lines.append(f"L {idx} {format_float(node.value)}")
                continue
            record = (
                f"N {idx} {node.feature} {format_float(node.threshold)} {node.left} {node.right}"
            )
            if widths is not None:
                record += f" {format_float(float(widths[t][idx]))}"
            lines.append(record)
    return "\n".join(lines) + "\n"


def _header_value(lines: list[tuple[int, str]], pos: int, key: str) -> tuple[int, str]:
    if pos >= len(lines):
        raise ParseError(f"missing '{key}' header")
    lineno, line = lines[pos]
    parts = line.split()
    if len(parts) != 2 or parts[0] != key:
        raise ParseError(f"expected '{key} <value>', got {line!r}", lineno)
    return lineno, parts[1]


def _finite(text: str, what: str, lineno: int) -> float:
    value = _coerce_finite_float(text)
    if value is None:
        raise ParseError(f"non-finite {what} {text!r}", lineno)
    return value


def _integer(text: str, what: str, lineno: int) -> int:
    try:
        return int(text)
    except ValueError as err:
        raise ParseError(f"bad {what} {text!r}", lineno) from err


def read_forest_document(
    text: str, tag: str = FOREST_TAG
) -> tuple[Forest, list[np.ndarray] | None]:
    """Parse a forest document; widths are returned for the fuzzy variant."""
    with_widths = tag != FOREST_TAG
    lines = [
        (lineno, raw.strip())
        for lineno, raw in enumerate(text.splitlines(), start=1)
        if raw.strip()
    ]
    if not lines:
        raise ParseError("empty forest document")
    lineno, header = lines[0]
    if header != f"{tag} v{FOREST_FORMAT_VERSION}":
        raise ParseError(f"expected '{tag} v{FOREST_FORMAT_VERSION}', got {header!r}", lineno)
    lineno, n_trees_text = _header_value(lines, 1, "n_trees")
    n_trees = _integer(n_trees_text, "tree count", lineno)
    lineno, base_text = _header_value(lines, 2, "base_score")
    base = _finite(base_text, "base_score", lineno)
    lineno, lr_text = _header_value(lines, 3, "learning_rate")
    learning_rate = _finite(lr_text, "learning_rate", lineno)

    pos = 4
    trees: list[Tree] = []
    widths: list[np.ndarray] = []
    for t in range(n_trees):
        if pos >= len(lines):
            raise ParseError(f"document ends before tree {t}")
        lineno, line = lines[pos]
        parts = line.split()
        if len(parts) != 3 or parts[0] != "tree" or parts[1] != str(t):
            raise ParseError(f"expected 'tree {t} <n_nodes>', got {line!r}", lineno)
        n_nodes = _integer(parts[2], "node count", lineno)
        if n_nodes < 1 or pos + 1 + n_nodes > len(lines):
            raise ParseError(f"tree {t} declares {n_nodes} nodes", lineno)
        pos += 1
        nodes: list[TreeNode] = []
        tree_widths = np.zeros(n_nodes)
        for idx in range(n_nodes):
            lineno, line = lines[pos]
            pos += 1
            parts = line.split()
            if len(parts) < 2 or _integer(parts[1], "node id", lineno) != idx:
                raise ParseError(f"tree {t}: expected record for node {idx}, got {line!r}", lineno)
            if parts[0] == "L" and len(parts) == 3:
                nodes.append(TreeNode.leaf(_finite(parts[2], "leaf value", lineno)))
            elif parts[0] == "N" and len(parts) == (7 if with_widths else 6):
                feature = _integer(parts[2], "feature", lineno)
                if feature < 0:
                    raise ParseError(f"tree {t}: node {idx} has negative feature", lineno)
                threshold = _finite(parts[3], "threshold", lineno)
                left = _integer(parts[4], "child id", lineno)
                right = _integer(parts[5], "child id", lineno)
                for child in (left, right):
                    if child < 0 or child >= n_nodes:
                        raise ParseError(
                            f"tree {t}: node {idx} has child {child} out of range", lineno
                        )
                if with_widths:
                    tree_widths[idx] = _finite(parts[6], "inverse width", lineno)
                nodes.append(TreeNode.split(feature, threshold, left, right))
            else:
                raise ParseError(f"tree {t}: malformed node record {line!r}", lineno)
        problem = structure_problem(nodes)
        if problem is not None:
            raise ParseError(f"tree {t}: {problem}")
        tree = Tree(tuple(nodes))
        canonical = tree.preorder()
        if with_widths:
            widths.append(_reorder_like(tree, tree_widths))
        trees.append(canonical)
    if pos != len(lines):
        lineno, line = lines[pos]
        raise ParseError(f"unexpected trailing record {line!r}", lineno)
    forest = Forest(tuple(trees), base, learning_rate)
    return forest, (widths if with_widths else None)


def _reorder_like(tree: Tree, per_node: np.ndarray) -> np.ndarray:
    order: list[int] = []
    stack = [0]
    while stack:
        idx = stack.pop()
        order.append(idx)
        node = tree.nodes[idx]
        if not node.is_leaf:
            stack.extend((node.right, node.left))
    return per_node[np.array(order, dtype=np.int64)]


def export_forest(forest: Forest) -> str:
    return write_forest_document(forest)


def import_forest(text: str) -> Forest:
    forest, _ = read_forest_document(text)
    _LOGGER.debug("Imported forest with %d trees", len(forest))
    return forest
