"""Shared fixtures for deep_embedding_forest tests."""

from __future__ import annotations

from collections.abc import Callable, Sequence
from typing import Any

import numpy as np
import pytest

from deep_embedding_forest.data import (
    Dataset,
    FeatureSchema,
    Sample,
    SparseVector,
    SynthConfig,
    gen_synthetic,
    parse_schema,
)
from deep_embedding_forest.fuzzy import FuzzyForest
from deep_embedding_forest.gbdt import Forest, Tree, TreeNode
from deep_embedding_forest.nn import DeepCrossingModel, TrainConfig, init_deep_crossing
from deep_embedding_forest.optim import Adam

# ── Shared constants ──────────────────────────────────────────────────

SCHEMA_TEXT = "query sparse 10 embed\ncounts dense 5 raw\n"

SMALL_SYNTH = SynthConfig(
    n_samples=120,
    n_sparse_dims=12,
    n_dense_dims=3,
    interaction_depth=2,
    noise=0.0,
    seed=7,
)

SMALL_TRAIN = TrainConfig(
    epochs=1,
    batch_size=16,
    learning_rate=0.01,
    seed=3,
    embed_dim=3,
    residual_hidden=(4,),
)


# ── Shared test helpers ───────────────────────────────────────────────


def stump(feature: int, threshold: float, left_value: float, right_value: float) -> Tree:
    """One split: left when y[feature] < threshold."""
    return Tree(
        (
            TreeNode.split(feature, threshold, 1, 2),
            TreeNode.leaf(left_value),
            TreeNode.leaf(right_value),
        )
    )


def perfect_tree(depth: int, feature: int = 0) -> Tree:
    """Perfect binary tree in pre-order with leaf values 0, 1, 2, ..."""
    nodes: list[TreeNode | None] = []
    leaf_count = 0

    def build(d: int, low: float, high: float) -> int:
        nonlocal leaf_count
        idx = len(nodes)
        nodes.append(None)
        if d == depth:
            nodes[idx] = TreeNode.leaf(float(leaf_count))
            leaf_count += 1
            return idx
        mid = (low + high) / 2.0
        left = build(d + 1, low, mid)
        right = build(d + 1, mid, high)
        nodes[idx] = TreeNode.split(feature, mid, left, right)
        return idx

    build(0, 0.0, 1.0)
    return Tree(tuple(nodes))


def random_tree(
    rng: np.random.Generator, depth: int, width: int, split_prob: float = 0.8
) -> Tree:
    """Random pre-order tree; the root always splits when depth > 0."""
    nodes: list[TreeNode | None] = []

    def build(d: int) -> int:
        idx = len(nodes)
        nodes.append(None)
        if d < depth and (d == 0 or rng.random() < split_prob):
            feature = int(rng.integers(width))
            threshold = float(rng.uniform(-1.0, 1.0))
            left = build(d + 1)
            right = build(d + 1)
            nodes[idx] = TreeNode.split(feature, threshold, left, right)
        else:
            nodes[idx] = TreeNode.leaf(float(rng.normal()))
        return idx

    build(0)
    return Tree(tuple(nodes))


def random_forest(
    rng: np.random.Generator,
    n_trees: int,
    depth: int,
    width: int,
    base_score: float = 0.0,
    learning_rate: float = 1.0,
) -> Forest:
    trees = tuple(random_tree(rng, depth, width) for _ in range(n_trees))
    return Forest(trees, base_score, learning_rate)


def relative_error(analytic: Any, numeric: Any) -> np.ndarray:
    """|a - n| / max(1e-5, |a| + |n|), elementwise."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    return np.abs(analytic - numeric) / np.maximum(1e-5, np.abs(analytic) + np.abs(numeric))


def central_difference(fn: Callable[[], float], param: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Numerical gradient of fn() with respect to *param*, perturbed in place."""
    grad = np.zeros(param.shape)
    flat = param.reshape(-1)
    grad_flat = grad.reshape(-1)
    for k in range(flat.size):
        original = flat[k]
        flat[k] = original + eps
        up = fn()
        flat[k] = original - eps
        down = fn()
        flat[k] = original
        grad_flat[k] = (up - down) / (2.0 * eps)
    return grad


def diverge_after(monkeypatch: pytest.MonkeyPatch, steps: int) -> None:
    """Make every Adam update from the *steps*-th one on leave NaN in all parameters."""
    original = Adam.step
    calls = 0

    def step(self: Adam, grads: Sequence[np.ndarray]) -> None:
        nonlocal calls
        original(self, grads)
        calls += 1
        if calls >= steps:
            for param in self.params:
                param[...] = np.nan

    monkeypatch.setattr(Adam, "step", step)


def make_sample(label: int, pairs: Sequence[tuple[int, float]], dense: Sequence[float]) -> Sample:
    """Sample for the `query sparse 10` + `counts dense 5` schema."""
    indices = [i for i, _ in pairs]
    values = [v for _, v in pairs]
    return Sample(label, (SparseVector(indices, values, 10), np.array(dense, dtype=np.float64)))


# ── Fixtures ──────────────────────────────────────────────────────────


@pytest.fixture
def schema() -> FeatureSchema:
    return parse_schema(SCHEMA_TEXT)


@pytest.fixture
def small_dataset() -> Dataset:
    """120 noise-free synthetic samples over two 12-dim sparse groups and 3 dense dims."""
    return gen_synthetic(SMALL_SYNTH)


@pytest.fixture
def make_model(small_dataset: Dataset) -> Callable[..., DeepCrossingModel]:
    """Factory fixture: a freshly initialized Deep Crossing model for `small_dataset`.

    Keyword overrides go to TrainConfig.
    """

    def _make(**overrides: Any) -> DeepCrossingModel:
        fields = {
            "epochs": SMALL_TRAIN.epochs,
            "batch_size": SMALL_TRAIN.batch_size,
            "learning_rate": SMALL_TRAIN.learning_rate,
            "seed": SMALL_TRAIN.seed,
            "embed_dim": SMALL_TRAIN.embed_dim,
            "residual_hidden": SMALL_TRAIN.residual_hidden,
        }
        fields.update(overrides)
        return init_deep_crossing(small_dataset.schema, TrainConfig(**fields))

    return _make


@pytest.fixture
def make_forest() -> Callable[..., Forest]:
    """Factory fixture: a Forest from node lists."""

    def _make(
        trees: Sequence[Sequence[TreeNode] | Tree],
        base_score: float = 0.0,
        learning_rate: float = 1.0,
    ) -> Forest:
        built = tuple(t if isinstance(t, Tree) else Tree(tuple(t)) for t in trees)
        return Forest(built, base_score, learning_rate)

    return _make


@pytest.fixture
def make_fuzzy_forest() -> Callable[..., FuzzyForest]:
    """Factory fixture: a random FuzzyForest with random positive widths."""

    def _make(
        seed: int = 0,
        n_trees: int = 3,
        depth: int = 3,
        width: int = 4,
        learning_rate: float = 0.7,
        base_score: float = 0.1,
    ) -> FuzzyForest:
        rng = np.random.default_rng(seed)
        forest = random_forest(rng, n_trees, depth, width, base_score, learning_rate)
        fuzzy = FuzzyForest.from_forest(forest)
        fuzzy.c[:] = rng.uniform(0.5, 3.0, size=fuzzy.c.shape)
        return fuzzy

    return _make
