"""Cross-entropy, Mahalanobis triplet loss and their weighted combination."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, EmptyBatch, UnknownCategory
from .prototypes import PrototypeSet, factor_grad


@dataclass(frozen=True)
class LossConfig:
    margin: float = 1.0
    lam: float = 0.5
    hinge: bool = True
    reduction: str = "mean"  # or "sum"

    def __post_init__(self):
        if not self.margin >= 0:
            raise ConfigError("loss.margin", f"must be >= 0, got {self.margin}")
        if not self.lam >= 0:
            raise ConfigError("loss.lam", f"must be >= 0, got {self.lam}")
        if self.reduction not in ("mean", "sum"):
            raise ConfigError("loss.reduction", f"must be 'mean' or 'sum', got {self.reduction!r}")


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(np.asarray(logits, dtype=np.float64)))


def cross_entropy(logits, label: int) -> tuple[float, np.ndarray]:
    """Loss ``-log softmax(logits)[label]`` and its gradient for one sample."""
    logits = np.asarray(logits, dtype=np.float64)
    lsm = log_softmax(logits)
    d = np.exp(lsm)
    d[label] -= 1.0
    return float(-lsm[label]), d


def cross_entropy_batch(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Batch-mean cross-entropy; the gradient already carries the 1/n factor."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    n = logits.shape[0]
    if n == 0:
        raise EmptyBatch("cross-entropy on an empty batch")
    lsm = log_softmax(logits)
    rows = np.arange(n)
    d = np.exp(lsm)
    d[rows, labels] -= 1.0
    return float(-np.mean(lsm[rows, labels])), d / n


@dataclass
class TripletResult:
    loss: float
    d_z: np.ndarray                      # (n, d)
    d_mean: list[np.ndarray]             # per prototype
    d_chol: list[np.ndarray]             # per prototype, w.r.t. stored factor params
    terms: np.ndarray                    # raw per-sample t, before hinge


def md_triplet(pset: PrototypeSet, z: np.ndarray, categories, cfg: LossConfig) -> TripletResult:
    """Mahalanobis triplet loss over a batch of features.

    Each sample contributes ``MD_own - min_{other} MD + margin`` (clipped at 0
    when ``cfg.hinge``). The gradient through the min goes to the first
    minimizing prototype only. With a single prototype there is no "other"
    term and the contribution reduces to ``MD_own``.
    """
    z = np.asarray(z, dtype=np.float64)
    cats = np.asarray(categories, dtype=np.intp)
    n = z.shape[0] if z.ndim == 2 else 0
    if n == 0:
        raise EmptyBatch("triplet loss on an empty batch")
    k = len(pset)
    if np.any(cats < 0) or np.any(cats >= k):
        bad = cats[(cats < 0) | (cats >= k)][0]
        raise UnknownCategory(f"category index {int(bad)} not in prototype set of size {k}")

    factors = [p.factor() for p in pset]
    diffs = [z - p.mean for p in pset]                   # (n, d) each
    proj = [u @ m for u, m in zip(diffs, factors)]       # rows of M.T u
    dist = np.column_stack([np.einsum("ij,ij->i", v, v) for v in proj])
    rows = np.arange(n)
    own = dist[rows, cats]

    if k > 1:
        masked = dist.copy()
        masked[rows, cats] = np.inf
        other_idx = np.argmin(masked, axis=1)
        other = dist[rows, other_idx]
        t = own - other + cfg.margin
    else:
        other_idx = None
        t = own.copy()

    if cfg.hinge:
        contrib = np.maximum(t, 0.0)
        active = (t > 0.0).astype(np.float64)
    else:
        contrib = t
        active = np.ones(n)
    scale = 1.0 / n if cfg.reduction == "mean" else 1.0
    loss = float(np.sum(contrib) * scale)

    # coef[i, q]: +w for the own prototype, -w for the chosen other one
    w = active * scale
    coef = np.zeros((n, k))
    coef[rows, cats] += w
    if other_idx is not None:
        coef[rows, other_idx] -= w

    d_z = np.zeros_like(z)
    d_mean, d_chol = [], []
    for q, p in enumerate(pset):
        c = coef[:, q]
        grad_zq = 2.0 * proj[q] @ factors[q].T          # rows of 2 M M^T u
        d_z += c[:, None] * grad_zq
        d_mean.append(-(c @ grad_zq))
        raw = 2.0 * (diffs[q] * c[:, None]).T @ proj[q]
        d_chol.append(factor_grad(p, raw))
    return TripletResult(loss, d_z, d_mean, d_chol, t)


def total_loss(ce: float, trip: float, cfg: LossConfig) -> float:
    return ce + cfg.lam * trip
