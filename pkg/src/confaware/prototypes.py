"""Learnable Gaussian prototypes and squared Mahalanobis distances.

Each prototype stores a mean and a lower-triangular factor ``M`` of its
precision matrix, ``inv(Sigma) = M @ M.T``. The diagonal of ``M`` is kept in
log space, so the precision is positive definite for any parameter values and
the distance ``||M.T @ (z - mean)||**2`` never needs an inverse.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import linalg
from .errors import DimensionMismatch, EmptySet

LOG_DIAG_MIN = -6.0
LOG_DIAG_MAX = 6.0
FULL_SHAPE_MAX_DIM = 32


class CategoryKind(str, enum.Enum):
    LIVE = "live"
    ATTACK = "attack"


class Shape(str, enum.Enum):
    FULL = "full"
    DIAGONAL = "diagonal"

    @classmethod
    def default_for(cls, dim: int) -> "Shape":
        return cls.FULL if dim <= FULL_SHAPE_MAX_DIM else cls.DIAGONAL


@dataclass(frozen=True)
class CategoryId:
    kind: CategoryKind
    name: str
    index: int

    @property
    def is_live(self) -> bool:
        return self.kind is CategoryKind.LIVE

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True, eq=False)
class GaussianPrototype:
    """One category's Gaussian.

    ``chol`` is the stored factor parameter: strict-lower entries are used as
    is, the diagonal holds ``log`` of the effective diagonal of ``M``.
    """

    category: CategoryId
    mean: np.ndarray
    chol: np.ndarray
    shape: Shape = Shape.FULL

    def __post_init__(self):
        mean = linalg.as_vector(self.mean).copy()
        chol = linalg.as_matrix(self.chol)
        d = mean.shape[0]
        if chol.shape != (d, d):
            raise DimensionMismatch(f"factor shape {chol.shape} does not match mean dim {d}")
        chol = np.tril(chol)
        if self.shape is Shape.DIAGONAL:
            chol = np.diag(np.diag(chol))
        idx = np.diag_indices(d)
        chol[idx] = np.clip(chol[idx], LOG_DIAG_MIN, LOG_DIAG_MAX)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "chol", chol)

    @classmethod
    def identity(cls, category: CategoryId, mean, shape: Shape = Shape.FULL) -> "GaussianPrototype":
        """Prototype with unit precision (distance is squared Euclidean)."""
        mean = np.asarray(mean, dtype=np.float64)
        return cls(category, mean, np.zeros((mean.shape[0], mean.shape[0])), shape)

    @classmethod
    def from_covariance(cls, category: CategoryId, mean, cov, shape: Shape = Shape.FULL) -> "GaussianPrototype":
        factor = linalg.cholesky(linalg.inverse_spd(cov))
        chol = factor.copy()
        idx = np.diag_indices(chol.shape[0])
        chol[idx] = np.log(factor[idx])
        return cls(category, mean, chol, shape)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def factor(self) -> np.ndarray:
        """The effective precision factor ``M`` (exp applied to the diagonal)."""
        m = self.chol.copy()
        idx = np.diag_indices(self.dim)
        m[idx] = np.exp(m[idx])
        return m

    def precision(self) -> np.ndarray:
        m = self.factor()
        return m @ m.T

    def covariance(self) -> np.ndarray:
        return linalg.inverse_spd(self.precision())

    def with_params(self, mean, chol) -> "GaussianPrototype":
        return replace(self, mean=np.asarray(mean, dtype=np.float64), chol=np.asarray(chol, dtype=np.float64))

    def distances(self, z: np.ndarray) -> np.ndarray:
        """Squared Mahalanobis distance for a batch ``z`` of shape (n, d)."""
        z = np.asarray(z, dtype=np.float64)
        if z.ndim != 2 or z.shape[1] != self.dim:
            raise DimensionMismatch(f"expected features of shape (n, {self.dim}), got {z.shape}")
        v = linalg.rows_times_transpose(z - self.mean, self.factor().T)
        return np.einsum("ij,ij->i", v, v)


@dataclass(frozen=True, eq=False)
class PrototypeSet:
    dim: int
    prototypes: tuple[GaussianPrototype, ...] = field(default_factory=tuple)

    def __post_init__(self):
        protos = tuple(self.prototypes)
        for i, p in enumerate(protos):
            if p.dim != self.dim:
                raise DimensionMismatch(f"prototype {i} has dim {p.dim}, set has dim {self.dim}")
            if p.category.index != i:
                raise ValueError(f"prototype at position {i} carries category index {p.category.index}")
        object.__setattr__(self, "prototypes", protos)

    def __len__(self) -> int:
        return len(self.prototypes)

    def __iter__(self):
        return iter(self.prototypes)

    def __getitem__(self, i: int) -> GaussianPrototype:
        return self.prototypes[i]

    @property
    def categories(self) -> list[CategoryId]:
        return [p.category for p in self.prototypes]

    def index_of(self, name: str) -> int:
        for p in self.prototypes:
            if p.category.name == name:
                return p.category.index
        raise KeyError(name)

    def replace_all(self, prototypes: Sequence[GaussianPrototype]) -> "PrototypeSet":
        return PrototypeSet(self.dim, tuple(prototypes))

    def distance_matrix(self, z: np.ndarray) -> np.ndarray:
        """Distances of shape (n, K) from each row of ``z`` to each prototype."""
        if not self.prototypes:
            raise EmptySet("prototype set is empty")
        return np.column_stack([p.distances(z) for p in self.prototypes])


def _check_point(proto: GaussianPrototype, z) -> np.ndarray:
    z = linalg.as_vector(z)
    if z.shape[0] != proto.dim:
        raise DimensionMismatch(f"feature dim {z.shape[0]} != prototype dim {proto.dim}")
    return z


def mahalanobis(proto: GaussianPrototype, z) -> float:
    """Squared Mahalanobis distance ``(z - mean).T @ inv(Sigma) @ (z - mean)``."""
    z = _check_point(proto, z)
    # same kernel as the batched path, so single and batch scores agree exactly
    return float(proto.distances(z[None, :])[0])


def mahalanobis_grads(proto: GaussianPrototype, z) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of :func:`mahalanobis` w.r.t. ``z``, the mean and ``proto.chol``.

    The factor gradient is taken w.r.t. the stored parameters, i.e. its
    diagonal is chained through the log parameterization.
    """
    z = _check_point(proto, z)
    m = proto.factor()
    u = z - proto.mean
    v = m.T @ u
    d_z = 2.0 * (m @ v)
    d_chol = factor_grad(proto, 2.0 * np.outer(u, v))
    return d_z, -d_z, d_chol


def factor_grad(proto: GaussianPrototype, raw: np.ndarray) -> np.ndarray:
    """Map a gradient w.r.t. the effective factor ``M`` onto ``proto.chol``."""
    g = np.tril(raw)
    if proto.shape is Shape.DIAGONAL:
        g = np.diag(np.diag(g))
    idx = np.diag_indices(proto.dim)
    g[idx] *= np.exp(proto.chol[idx])
    return g


def nearest_prototype(pset: PrototypeSet, z) -> tuple[CategoryId, float]:
    """Closest prototype to ``z``; ties go to the lowest category index."""
    if len(pset) == 0:
        raise EmptySet("prototype set is empty")
    best, best_d = 0, np.inf
    for p in pset:
        d = mahalanobis(p, z)
        if d < best_d:
            best, best_d = p.category.index, d
    return pset[best].category, best_d
