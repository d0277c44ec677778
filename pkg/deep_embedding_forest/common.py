"""Shared numeric types and helpers."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from .const import FLOAT_FORMAT, PROB_EPS


@dataclass
class OpCounter:
    """Instrumentation counters for the serving cost model.

    `multiplies` counts scalar multiplications in embedding layers,
    `node_visits` counts tree nodes touched by hard or fuzzy traversal.
    """

    multiplies: int = 0
    node_visits: int = 0

    def reset(self) -> None:
        self.multiplies = 0
        self.node_visits = 0


def _coerce_finite_float(value: Any) -> float | None:
    if value is None:
        return None
    try:
        number = float(value)
    except (TypeError, ValueError):
        return None
    if not math.isfinite(number):
        return None
    return number


def _coerce_positive_int(value: Any) -> int | None:
    try:
        number = int(value)
    except (TypeError, ValueError):
        return None
    if number <= 0:
        return None
    return number


def sigmoid(z: float) -> float:
    """Numerically stable scalar logistic function."""
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


def clamp_prob(p: float) -> float:
    return min(max(p, PROB_EPS), 1.0 - PROB_EPS)


def logit(p: float) -> float:
    p = clamp_prob(p)
    return math.log(p / (1.0 - p))


def format_float(value: float) -> str:
    """Format a float at 17 significant digits (lossless for float64)."""
    return FLOAT_FORMAT % value


def sha256_bytes(payload: bytes) -> str:
    return hashlib.sha256(payload).hexdigest()


def sha256_file(path: Any) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def glorot_uniform(
    rng: np.random.Generator, fan_out: int, fan_in: int
) -> np.ndarray:
    """Uniform(-sqrt(6/(fan_in+fan_out)), +) matrix of shape (fan_out, fan_in)."""
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))
