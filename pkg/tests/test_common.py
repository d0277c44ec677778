"""Tests for shared helpers, the tensor codec and the optimizer."""

from __future__ import annotations

import math

import numpy as np
import pytest

from deep_embedding_forest.common import (
    OpCounter,
    _coerce_finite_float,
    _coerce_positive_int,
    clamp_prob,
    format_float,
    glorot_uniform,
    logit,
    sigmoid,
)
from deep_embedding_forest.errors import ModelFormatError
from deep_embedding_forest.optim import Adam
from deep_embedding_forest.tensor_io import pack_tensors, unpack_tensors


# ── _coerce_finite_float ──────────────────────────────────────────────


class TestCoerceFiniteFloat:
    """Tests for _coerce_finite_float."""

    def test_valid_string(self) -> None:
        assert _coerce_finite_float("2.5") == 2.5

    def test_valid_int(self) -> None:
        assert _coerce_finite_float(3) == 3.0

    def test_none_returns_none(self) -> None:
        assert _coerce_finite_float(None) is None

    def test_non_numeric_string_returns_none(self) -> None:
        assert _coerce_finite_float("abc") is None

    def test_nan_returns_none(self) -> None:
        assert _coerce_finite_float("nan") is None

    def test_inf_returns_none(self) -> None:
        assert _coerce_finite_float(float("-inf")) is None


# ── _coerce_positive_int ──────────────────────────────────────────────


class TestCoercePositiveInt:
    """Tests for _coerce_positive_int."""

    def test_positive_value(self) -> None:
        assert _coerce_positive_int("49292") == 49292

    def test_zero_returns_none(self) -> None:
        assert _coerce_positive_int(0) is None

    def test_negative_returns_none(self) -> None:
        assert _coerce_positive_int("-4") is None

    def test_fractional_string_returns_none(self) -> None:
        assert _coerce_positive_int("1.5") is None


# ── Scalar math ───────────────────────────────────────────────────────


class TestSigmoid:
    """Tests for sigmoid, clamp_prob and logit."""

    def test_midpoint(self) -> None:
        assert sigmoid(0.0) == 0.5

    def test_known_value(self) -> None:
        assert sigmoid(1.0) == pytest.approx(0.7310585786300049, abs=1e-15)

    def test_extremes_do_not_overflow(self) -> None:
        assert sigmoid(1000.0) == 1.0
        assert sigmoid(-1000.0) == 0.0

    def test_symmetry(self) -> None:
        for z in (0.3, 2.0, 17.5):
            assert sigmoid(z) + sigmoid(-z) == pytest.approx(1.0, abs=1e-15)

    def test_clamp_prob(self) -> None:
        assert clamp_prob(1.0) == 1.0 - 1e-12
        assert clamp_prob(0.0) == 1e-12
        assert clamp_prob(0.3) == 0.3

    def test_logit_inverts_sigmoid(self) -> None:
        assert logit(0.5) == 0.0
        assert logit(sigmoid(1.25)) == pytest.approx(1.25, abs=1e-12)

    def test_logit_of_one_is_finite(self) -> None:
        assert math.isfinite(logit(1.0))


class TestFormatFloat:
    """Tests for format_float."""

    def test_round_trips_exactly(self) -> None:
        rng = np.random.default_rng(0)
        for value in rng.normal(size=50).tolist() + [0.1, 1e-300, -2.5e17]:
            assert float(format_float(value)) == value

    def test_seventeen_digits(self) -> None:
        assert format_float(0.1) == "0.10000000000000001"


class TestOpCounter:
    """Tests for OpCounter."""

    def test_reset(self) -> None:
        counter = OpCounter(multiplies=5, node_visits=3)
        counter.reset()
        assert counter == OpCounter()


class TestGlorotUniform:
    """Tests for glorot_uniform."""

    def test_shape_and_bound(self) -> None:
        rng = np.random.default_rng(1)
        w = glorot_uniform(rng, 4, 6)
        assert w.shape == (4, 6)
        assert np.all(np.abs(w) <= math.sqrt(6.0 / 10.0))

    def test_seeded(self) -> None:
        a = glorot_uniform(np.random.default_rng(9), 3, 3)
        b = glorot_uniform(np.random.default_rng(9), 3, 3)
        np.testing.assert_array_equal(a, b)


# ── Tensor codec ──────────────────────────────────────────────────────


class TestTensorCodec:
    """Tests for pack_tensors / unpack_tensors."""

    def test_round_trip_is_bit_exact(self) -> None:
        rng = np.random.default_rng(2)
        tensors = {
            "embed/query/W": rng.normal(size=(3, 5)),
            "embed/query/b": rng.normal(size=3),
            "score/b": np.array(0.125),
        }
        restored = unpack_tensors(pack_tensors(tensors))
        assert list(restored) == list(tensors)
        for name, array in tensors.items():
            assert restored[name].shape == array.shape
            np.testing.assert_array_equal(restored[name], array)

    def test_empty_mapping(self) -> None:
        assert unpack_tensors(pack_tensors({})) == {}

    def test_truncated_payload(self) -> None:
        payload = pack_tensors({"w": np.ones(4)})
        with pytest.raises(ModelFormatError, match="truncated"):
            unpack_tensors(payload[:-1])

    def test_duplicate_name(self) -> None:
        payload = pack_tensors({"w": np.ones(2)})
        with pytest.raises(ModelFormatError, match="duplicate tensor w"):
            unpack_tensors(payload + payload)


# ── Adam ──────────────────────────────────────────────────────────────


class TestAdam:
    """Tests for the Adam optimizer."""

    def test_zero_learning_rate_is_a_no_op(self) -> None:
        param = np.array([1.0, -2.0])
        Adam([param], 0.0).step([np.array([0.5, 0.5])])
        np.testing.assert_array_equal(param, [1.0, -2.0])

    def test_first_step_moves_by_learning_rate(self) -> None:
        param = np.array([1.0, 1.0])
        Adam([param], 0.01).step([np.array([3.0, -0.2])])
        np.testing.assert_allclose(param, [0.99, 1.01], atol=1e-6)

    def test_updates_zero_dim_parameters_in_place(self) -> None:
        param = np.zeros(())
        Adam([param], 0.1).step([np.array(1.0)])
        assert float(param) == pytest.approx(-0.1, abs=1e-6)

    def test_gradient_count_mismatch(self) -> None:
        with pytest.raises(ValueError, match="expected 2 gradients"):
            Adam([np.zeros(1), np.zeros(1)], 0.1).step([np.zeros(1)])

    def test_minimizes_quadratic(self) -> None:
        x = np.array([0.0])
        optimizer = Adam([x], 0.05)
        for _ in range(2000):
            optimizer.step([2.0 * (x - 3.0)])
        assert x[0] == pytest.approx(3.0, abs=0.1)
