"""Tests for schema parsing, sample I/O, tri-letter featurization and synthetic data."""

from __future__ import annotations

import io

import numpy as np
import pytest
import scipy.sparse as sp
from scipy.special import expit

from deep_embedding_forest.data import (
    Dataset,
    FeatureGroup,
    FeatureSchema,
    Sample,
    SparseVector,
    SynthConfig,
    featurize_records,
    fnv1a_64,
    gen_synthetic,
    parse_samples,
    parse_schema,
    serialize_sample,
    serialize_samples,
    serialize_schema,
    triletter_featurize,
    triletter_grams,
)
from deep_embedding_forest.errors import ConfigError, ParseError, ShapeError, ValidationError
from deep_embedding_forest.gbdt import GbdtConfig, predict_hard_batch, train_gbdt
from deep_embedding_forest.nn import StackedDataset, mean_log_loss

from .conftest import SCHEMA_TEXT, make_sample


def _parse(text: str, schema: FeatureSchema) -> Dataset:
    return parse_samples(io.StringIO(text), schema)


# ── Schema ────────────────────────────────────────────────────────────


class TestParseSchema:
    """Tests for parse_schema / serialize_schema."""

    def test_two_groups(self) -> None:
        schema = parse_schema("query sparse 49292 embed\ncounts dense 5 raw\n")
        assert [g.name for g in schema.groups] == ["query", "counts"]
        assert [g.dim for g in schema.groups] == [49292, 5]
        assert schema.groups[0].is_sparse and schema.groups[0].embed
        assert not schema.groups[1].is_sparse and not schema.groups[1].embed
        assert schema.raw_dim == 49297

    def test_comments_and_blank_lines(self) -> None:
        schema = parse_schema("# groups\n\nquery sparse 10 embed  # text\n")
        assert len(schema) == 1

    def test_empty_file(self) -> None:
        with pytest.raises(ParseError, match="no groups"):
            parse_schema("")

    def test_duplicate_group(self) -> None:
        with pytest.raises(ParseError, match="duplicate group a") as err:
            parse_schema("a dense 3 raw\na dense 3 raw\n")
        assert err.value.line == 2

    def test_non_positive_dim(self) -> None:
        with pytest.raises(ParseError, match="line 1: non-positive dim"):
            parse_schema("a dense 0 raw\n")

    def test_unknown_kind(self) -> None:
        with pytest.raises(ParseError, match="unknown kind"):
            parse_schema("a ragged 3 raw\n")

    def test_round_trip(self) -> None:
        assert serialize_schema(parse_schema(SCHEMA_TEXT)) == SCHEMA_TEXT

    def test_index_of(self, schema: FeatureSchema) -> None:
        assert schema.index_of("counts") == 1
        with pytest.raises(KeyError):
            schema.index_of("title")

    def test_direct_construction_rejects_duplicates(self) -> None:
        group = FeatureGroup("a", "dense", 2, False)
        with pytest.raises(ValidationError, match="duplicate group a"):
            FeatureSchema((group, group))


# ── SparseVector ──────────────────────────────────────────────────────


class TestSparseVector:
    """Tests for SparseVector validation."""

    def test_to_dense(self) -> None:
        vec = SparseVector([1, 3], [2.0, 0.5], 5)
        np.testing.assert_array_equal(vec.to_dense(), [0.0, 2.0, 0.0, 0.5, 0.0])
        assert vec.nnz == 2

    def test_out_of_range(self) -> None:
        with pytest.raises(ShapeError, match="index out of range"):
            SparseVector([5], [1.0], 5)

    def test_unsorted(self) -> None:
        with pytest.raises(ValidationError, match="strictly increasing"):
            SparseVector([3, 1], [1.0, 1.0], 5)

    def test_explicit_zero(self) -> None:
        with pytest.raises(ValidationError, match="explicit zero"):
            SparseVector([1], [0.0], 5)

    def test_empty(self) -> None:
        assert SparseVector.empty(4).nnz == 0


# ── Samples ───────────────────────────────────────────────────────────


class TestParseSamples:
    """Tests for parse_samples / serialize_sample."""

    def test_transcribes_fields(self, schema: FeatureSchema) -> None:
        dataset = _parse("1\t3:1 7:2\t0.5,0.1,0,0,0\n", schema)
        assert dataset.samples[0] == make_sample(1, [(3, 1.0), (7, 2.0)], [0.5, 0.1, 0, 0, 0])

    def test_empty_sparse_field(self, schema: FeatureSchema) -> None:
        sample = _parse("0\t\t0,0,0,0,0\n", schema).samples[0]
        assert sample.label == 0
        assert sample.fields[0].nnz == 0
        np.testing.assert_array_equal(sample.fields[1], np.zeros(5))

    def test_index_out_of_range(self, schema: FeatureSchema) -> None:
        with pytest.raises(ParseError, match="index out of range"):
            _parse("1\t10:1\t0,0,0,0,0\n", schema)

    def test_wrong_field_count_names_line(self, schema: FeatureSchema) -> None:
        with pytest.raises(ParseError, match="line 2: wrong field count"):
            _parse("1\t\t0,0,0,0,0\n0\t1:1\n", schema)

    def test_non_finite_value(self, schema: FeatureSchema) -> None:
        with pytest.raises(ParseError, match="non-finite"):
            _parse("1\t1:nan\t0,0,0,0,0\n", schema)
        with pytest.raises(ParseError, match="non-finite"):
            _parse("1\t\t0,inf,0,0,0\n", schema)

    def test_duplicate_index(self, schema: FeatureSchema) -> None:
        with pytest.raises(ParseError, match="duplicate index 2"):
            _parse("1\t2:1 2:3\t0,0,0,0,0\n", schema)

    def test_bad_label(self, schema: FeatureSchema) -> None:
        with pytest.raises(ParseError, match="label must be 0 or 1"):
            _parse("2\t\t0,0,0,0,0\n", schema)

    def test_explicit_zero_is_dropped(self, schema: FeatureSchema) -> None:
        sample = _parse("1\t4:0 6:1\t0,0,0,0,0\n", schema).samples[0]
        np.testing.assert_array_equal(sample.fields[0].indices, [6])

    def test_negative_zero_is_dropped(self, schema: FeatureSchema) -> None:
        sample = _parse("1\t4:-0.0 6:1\t0,0,0,0,0\n", schema).samples[0]
        assert serialize_sample(sample) == "1\t6:1\t0,0,0,0,0\n"

    def test_duplicate_of_dropped_zero(self, schema: FeatureSchema) -> None:
        with pytest.raises(ParseError, match="duplicate index 4"):
            _parse("1\t4:0 4:2\t0,0,0,0,0\n", schema)

    def test_dense_negative_zero_is_written_as_zero(self, schema: FeatureSchema) -> None:
        sample = _parse("0\t\t-0.0,0.5,-0,0,1\n", schema).samples[0]
        assert serialize_sample(sample) == "0\t\t0,0.5,0,0,1\n"
        assert _parse(serialize_sample(sample), schema).samples[0] == sample

    def test_unsorted_indices_are_sorted(self, schema: FeatureSchema) -> None:
        sample = _parse("1\t6:1 2:4\t0,0,0,0,0\n", schema).samples[0]
        np.testing.assert_array_equal(sample.fields[0].indices, [2, 6])

    def test_canonical_serialization(self, schema: FeatureSchema) -> None:
        line = "1\t3:1 7:2.5\t0.5,0.1,0,0,3\n"
        sample = _parse(line, schema).samples[0]
        assert serialize_sample(sample) == line

    def test_serialize_then_parse(self, small_dataset: Dataset) -> None:
        text = "".join(serialize_samples(small_dataset))
        restored = _parse(text, small_dataset.schema)
        assert restored.samples == small_dataset.samples


class TestDataset:
    """Tests for Dataset."""

    def test_rejects_mismatched_sample(self, schema: FeatureSchema) -> None:
        bad = Sample(1, (SparseVector.empty(10),))
        with pytest.raises(ShapeError):
            Dataset(schema, (bad,))

    def test_labels(self, schema: FeatureSchema) -> None:
        dataset = _parse("1\t\t0,0,0,0,0\n0\t\t0,0,0,0,0\n", schema)
        np.testing.assert_array_equal(dataset.labels, [1.0, 0.0])

    def test_group_matrix(self, schema: FeatureSchema) -> None:
        dataset = _parse("1\t3:1 7:2\t1,2,3,4,5\n0\t0:4\t0,0,0,0,0\n", schema)
        sparse = dataset.group_matrix(0)
        assert sp.issparse(sparse)
        np.testing.assert_array_equal(
            sparse.toarray(),
            [[0, 0, 0, 1, 0, 0, 0, 2, 0, 0], [4, 0, 0, 0, 0, 0, 0, 0, 0, 0]],
        )
        np.testing.assert_array_equal(dataset.group_matrix(1, np.array([1, 0]))[1], [1, 2, 3, 4, 5])

    def test_digest_tracks_content(self, schema: FeatureSchema) -> None:
        first = _parse("1\t3:1\t0,0,0,0,0\n", schema)
        same = _parse("1\t3:1\t0,0,0,0,0\n", schema)
        other = _parse("0\t3:1\t0,0,0,0,0\n", schema)
        assert first.digest() == same.digest()
        assert first.digest() != other.digest()

    def test_subset(self, small_dataset: Dataset) -> None:
        part = small_dataset.subset([4, 0])
        assert part.samples == (small_dataset.samples[4], small_dataset.samples[0])


# ── Tri-letter grams ──────────────────────────────────────────────────


class TestTriletter:
    """Tests for tri-letter hashing."""

    def test_fnv1a_reference_values(self) -> None:
        assert fnv1a_64(b"") == 0xCBF29CE484222325
        assert fnv1a_64(b"a") == 0xAF63DC4C8601EC8C

    def test_grams_of_short_word(self) -> None:
        assert triletter_grams("ad") == ["#ad", "ad#"]

    def test_grams_lowercase_each_word(self) -> None:
        assert triletter_grams("Hi Yo") == ["#hi", "hi#", "#yo", "yo#"]

    def test_two_distinct_grams(self) -> None:
        vec = triletter_featurize("ad", 1 << 40)
        assert vec.nnz == 2
        np.testing.assert_array_equal(vec.values, [1.0, 1.0])

    def test_empty_text(self) -> None:
        assert triletter_featurize("", 100).nnz == 0

    def test_repeated_gram_counts(self) -> None:
        vec = triletter_featurize("aaaa", 1 << 40)
        aaa = fnv1a_64(b"aaa") % (1 << 40)
        assert vec.nnz == 3
        assert dict(zip(vec.indices.tolist(), vec.values.tolist()))[aaa] == 2.0

    def test_collisions_merge(self) -> None:
        vec = triletter_featurize("some longer text", 1)
        assert vec.nnz == 1
        assert vec.values[0] == len(triletter_grams("some longer text"))

    def test_featurize_records(self) -> None:
        schema = parse_schema("query sparse 64 embed\ncounts dense 2 raw\n")
        dataset = featurize_records(io.StringIO("1\thello world\t0.5,2\n"), schema)
        sample = dataset.samples[0]
        assert sample.label == 1
        assert sample.fields[0] == triletter_featurize("hello world", 64)
        np.testing.assert_array_equal(sample.fields[1], [0.5, 2.0])


# ── Synthetic data ────────────────────────────────────────────────────


def _synth(**overrides: object) -> SynthConfig:
    fields: dict[str, object] = {
        "n_samples": 300,
        "n_sparse_dims": 50,
        "n_dense_dims": 4,
        "interaction_depth": 3,
        "noise": 0.05,
        "seed": 7,
    }
    fields.update(overrides)
    return SynthConfig(**fields)  # type: ignore[arg-type]


class TestGenSynthetic:
    """Tests for gen_synthetic."""

    def test_seeded_runs_are_identical(self) -> None:
        assert gen_synthetic(_synth()).digest() == gen_synthetic(_synth()).digest()

    def test_seed_changes_data(self) -> None:
        assert gen_synthetic(_synth()).digest() != gen_synthetic(_synth(seed=8)).digest()

    def test_empty(self) -> None:
        assert len(gen_synthetic(_synth(n_samples=0))) == 0

    def test_schema_shape(self) -> None:
        dataset = gen_synthetic(_synth(n_sparse_groups=3))
        assert [g.name for g in dataset.schema.groups] == ["query", "keyword", "title", "counts"]
        assert dataset.schema.groups[-1].dim == 4

    def test_sparse_fields_are_multi_hot_counts(self) -> None:
        dataset = gen_synthetic(_synth())
        for sample in dataset.samples:
            for field in sample.fields[:-1]:
                assert 1 <= field.nnz <= 10
                assert np.all(field.values >= 1.0)
                assert np.all(field.values == np.round(field.values))
                assert 3 <= field.values.sum() <= 10

    def test_depth_one_rule_is_dense_threshold(self) -> None:
        dataset = gen_synthetic(_synth(interaction_depth=1, noise=0.0))
        dense = np.vstack([s.fields[-1] for s in dataset.samples])
        np.testing.assert_array_equal(dataset.labels, (dense[:, 0] >= 0.5).astype(float))

    def test_depth_one_rule_is_learned_by_one_tree(self) -> None:
        dataset = gen_synthetic(_synth(interaction_depth=1, noise=0.0, n_samples=500))
        dense = np.vstack([s.fields[-1] for s in dataset.samples])
        stacked = StackedDataset(dataset.labels, dense)
        forest = train_gbdt(
            stacked,
            GbdtConfig(n_trees=1, max_leaves=2, min_samples_leaf=1, lambda_=0.0, learning_rate=5.0),
        )
        raw = predict_hard_batch(forest, dense)
        assert forest.trees[0].nodes[0].feature == 0
        assert np.all((raw > forest.base_score) == (dataset.labels == 1.0))
        assert mean_log_loss(expit(raw), dataset.labels) < 0.01

    def test_noise_flips_some_labels(self) -> None:
        clean = gen_synthetic(_synth(noise=0.0, n_samples=2000))
        noisy = gen_synthetic(_synth(noise=0.3, n_samples=2000))
        assert clean.digest() != noisy.digest()

    def test_invalid_noise(self) -> None:
        with pytest.raises(ConfigError, match="noise"):
            _synth(noise=0.6)
