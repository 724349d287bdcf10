"""Feed-forward feature extractor ``f`` and 2-logit live/spoof head ``g``.

Every extractor layer is affine followed by the hidden activation; the head is
a plain affine map on the feature vector. All functions accept either a single
input vector or a batch of row vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, ShapeMismatch
from .linalg import rows_times_transpose

ACTIVATIONS = ("relu", "tanh")


@dataclass(eq=False)
class MlpParams:
    layers: list[tuple[np.ndarray, np.ndarray]]
    head: tuple[np.ndarray, np.ndarray]
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not self.layers:
            raise ValueError("extractor needs at least one layer")
        prev = None
        for i, (w, b) in enumerate(self.layers):
            if b.shape != (w.shape[0],):
                raise ShapeMismatch(f"layer {i}: bias {b.shape} vs weight {w.shape}")
            if prev is not None and w.shape[1] != prev:
                raise ShapeMismatch(f"layer {i} expects {w.shape[1]} inputs, previous layer gives {prev}")
            prev = w.shape[0]
        hw, hb = self.head
        if hw.shape != (2, prev) or hb.shape != (2,):
            raise ShapeMismatch(f"head must be (2, {prev}) + (2,), got {hw.shape} + {hb.shape}")

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def feature_dim(self) -> int:
        return self.layers[-1][0].shape[0]

    def named_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(self.layers):
            out[f"layer{i}.weight"] = w
            out[f"layer{i}.bias"] = b
        out["head.weight"], out["head.bias"] = self.head
        return out

    @classmethod
    def from_named_arrays(cls, arrays: dict[str, np.ndarray], activation: str) -> "MlpParams":
        n = sum(1 for k in arrays if k.startswith("layer") and k.endswith(".weight"))
        layers = [(arrays[f"layer{i}.weight"], arrays[f"layer{i}.bias"]) for i in range(n)]
        return cls(layers, (arrays["head.weight"], arrays["head.bias"]), activation)


def init_mlp(
    input_dim: int,
    hidden: tuple[int, ...] = (32, 32),
    feature_dim: int = 16,
    activation: str = "relu",
    rng: np.random.Generator | None = None,
) -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng() if rng is None else rng
    dims = [input_dim, *hidden, feature_dim]

    def glorot(fan_out, fan_in):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_out, fan_in))

    layers = [(glorot(o, i), np.zeros(o)) for i, o in zip(dims[:-1], dims[1:])]
    head = (glorot(2, feature_dim), np.zeros(2))
    return MlpParams(layers, head, activation)


@dataclass
class ForwardTrace:
    x: np.ndarray
    pre: list[np.ndarray] = field(default_factory=list)
    post: list[np.ndarray] = field(default_factory=list)
    logits: np.ndarray | None = None

    @property
    def z(self) -> np.ndarray:
        return self.post[-1]


def _act(name, a):
    return np.maximum(a, 0.0) if name == "relu" else np.tanh(a)


def _act_grad(name, pre, post, g):
    if name == "relu":
        return g * (pre > 0.0)
    return g * (1.0 - post * post)


def _as_batch(x, dim) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.ndim != 2 or x2.shape[1] != dim:
        raise DimensionMismatch(f"expected input dim {dim}, got shape {x.shape}")
    return x2, single


def extract(params: MlpParams, x, trace: ForwardTrace | None = None) -> np.ndarray:
    """Features ``f(x)``; rows in, rows out."""
    h, single = _as_batch(x, params.input_dim)
    for w, b in params.layers:
        a = rows_times_transpose(h, w) + b
        h = _act(params.activation, a)
        if trace is not None:
            trace.pre.append(a)
            trace.post.append(h)
    return h[0] if single else h


def head_logits(params: MlpParams, z) -> np.ndarray:
    """Classifier logits ``g(z)``; column 0 is live, column 1 spoof."""
    w, b = params.head
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != w.shape[1]:
        raise DimensionMismatch(f"head expects features of dim {w.shape[1]}, got {z.shape}")
    if z.ndim == 1:
        return rows_times_transpose(z[None, :], w)[0] + b
    return rows_times_transpose(z, w) + b


def forward(params: MlpParams, x) -> ForwardTrace:
    """Batched forward pass, caching everything :func:`backward` needs.

    The trace always holds 2-D arrays, even for a single input vector.
    """
    x2, _ = _as_batch(x, params.input_dim)
    trace = ForwardTrace(x=x2)
    z = extract(params, x2, trace)
    trace.logits = head_logits(params, z)
    return trace


def backward(params: MlpParams, trace: ForwardTrace, d_logits, d_z) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Reverse pass for the scalar ``sum(d_logits * logits) + sum(d_z * z)``.

    Returns:
        ``(grads, d_x)`` where ``grads`` is keyed like
        :meth:`MlpParams.named_arrays` and gradients are summed over the batch.
    """
    n = trace.x.shape[0]
    d_logits = np.asarray(d_logits, dtype=np.float64).reshape(n, -1)
    d_z = np.asarray(d_z, dtype=np.float64).reshape(n, -1)
    if d_logits.shape != trace.logits.shape or d_z.shape != trace.z.shape:
        raise ShapeMismatch(
            f"cotangents {d_logits.shape}/{d_z.shape} vs trace {trace.logits.shape}/{trace.z.shape}"
        )
    if len(trace.pre) != len(params.layers):
        raise ShapeMismatch("trace was not produced by these parameters")

    hw, _ = params.head
    grads = {
        "head.weight": d_logits.T @ trace.z,
        "head.bias": d_logits.sum(axis=0),
    }
    g = d_z + d_logits @ hw
    for i in range(len(params.layers) - 1, -1, -1):
        w, _ = params.layers[i]
        g = _act_grad(params.activation, trace.pre[i], trace.post[i], g)
        inp = trace.post[i - 1] if i > 0 else trace.x
        grads[f"layer{i}.weight"] = g.T @ inp
        grads[f"layer{i}.bias"] = g.sum(axis=0)
        g = g @ w
    return grads, g
