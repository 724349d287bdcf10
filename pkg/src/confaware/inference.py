"""Confidence scores, accept/reject decisions and quantile thresholds."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import network
from .errors import EmptyList, EmptySet, InvalidQuantile
from .losses import softmax
from .network import MlpParams
from .prototypes import PrototypeSet, nearest_prototype

# Absorbs p * N landing a hair below an integer (0.29 * 100 -> 28.999...).
_FLOOR_EPS = 1e-9


def confidence(pset: PrototypeSet, z) -> float:
    """Negative squared Mahalanobis distance to the nearest prototype."""
    _, dist = nearest_prototype(pset, z)
    return -dist


def confidences(pset: PrototypeSet, z: np.ndarray) -> np.ndarray:
    """Batched :func:`confidence` for features of shape (n, d)."""
    if len(pset) == 0:
        raise EmptySet("prototype set is empty")
    return -np.min(pset.distance_matrix(z), axis=1)


@dataclass(frozen=True)
class ConfidenceThreshold:
    value: float
    quantile: float | None = None  # None for a fixed threshold

    @classmethod
    def fixed(cls, value: float) -> "ConfidenceThreshold":
        return cls(float(value), None)

    @property
    def origin(self) -> str:
        return "fixed" if self.quantile is None else f"quantile:{self.quantile:g}"


def _rejected_count(n: int, p: float) -> int:
    return min(n, math.floor(p * n + _FLOOR_EPS))


def quantile_threshold(values, p: float) -> ConfidenceThreshold:
    """Threshold below which the ``floor(p * N)`` lowest confidences fall.

    The value is the (k+1)-th smallest confidence, so samples strictly below
    it are rejected. ``p = 0`` gives ``-inf`` (reject none) and ``p = 1``
    gives ``+inf`` (reject all). With ties at the cut fewer than k samples may
    end up strictly below.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise EmptyList("no confidences to take a quantile of")
    if not (0.0 <= p <= 1.0):
        raise InvalidQuantile(f"quantile must be in [0, 1], got {p}")
    k = _rejected_count(values.size, p)
    if p == 0.0 or k == 0:
        return ConfidenceThreshold(-math.inf, p)
    if p == 1.0 or k >= values.size:
        return ConfidenceThreshold(math.inf, p)
    return ConfidenceThreshold(float(np.sort(values, kind="stable")[k]), p)


def retained_mask(values, threshold: ConfidenceThreshold) -> np.ndarray:
    return np.asarray(values, dtype=np.float64) >= threshold.value


@dataclass(frozen=True)
class Accept:
    live_probability: float
    confidence: float

    @property
    def predicted(self) -> str:
        return "live" if self.live_probability >= 0.5 else "spoof"


@dataclass(frozen=True)
class Reject:
    alert: str
    nearest: str
    distance: float

    @property
    def confidence(self) -> float:
        return -self.distance


Decision = Accept | Reject


def decide(model: MlpParams, pset: PrototypeSet, x, threshold: ConfidenceThreshold) -> Decision:
    """Classify ``x`` if its confidence clears the threshold, otherwise alert.

    The head is only evaluated for accepted inputs.
    """
    z = network.extract(model, np.asarray(x, dtype=np.float64))
    category, dist = nearest_prototype(pset, z)
    conf = -dist
    if conf >= threshold.value:
        logits = network.head_logits(model, z)
        return Accept(float(softmax(logits)[0]), conf)
    alert = (
        f"low confidence {conf:.6g} < {threshold.value:.6g}: "
        f"nearest known category {category.name!r} at distance {dist:.6g}; refer for manual review"
    )
    return Reject(alert, category.name, dist)


def score(model: MlpParams, pset: PrototypeSet, X) -> tuple[np.ndarray, np.ndarray]:
    """Live probabilities and confidences for a batch of raw inputs."""
    z = network.extract(model, np.atleast_2d(np.asarray(X, dtype=np.float64)))
    live_prob = softmax(network.head_logits(model, z))[:, 0]
    return live_prob, confidences(pset, z)
