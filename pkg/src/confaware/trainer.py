"""Joint SGD training of the network and the Gaussian prototypes."""

from __future__ import annotations

import enum
import json
import logging
import zlib
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import network
from .errors import (
    CategoryTooSmall,
    ConfigError,
    EmptyCategory,
    EmptyDataset,
    FormatVersionMismatch,
    CorruptChecksum,
    NonFiniteGradient,
    ShapeMismatch,
)
from .losses import LossConfig, cross_entropy_batch, md_triplet, total_loss
from .network import MlpParams
from .prototypes import CategoryId, CategoryKind, GaussianPrototype, PrototypeSet, Shape
from .synthdata import Dataset, attack_name, is_live_label

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
LIVE, SPOOF = 0, 1


class GroupingMode(str, enum.Enum):
    ONE_CLASS = "one-class"
    BINARY = "binary"
    DOMAIN_BASED = "domain-based"
    ATTACK_BASED = "attack-based"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    epochs: int = 30
    batch_size: int = 64
    seed: int = 7
    loss: LossConfig = field(default_factory=LossConfig)
    grouping: GroupingMode = GroupingMode.ATTACK_BASED
    prototype_shape: Shape | None = None  # None: pick from the feature dim
    warmup_epochs_for_means: int = 1
    hidden: tuple[int, ...] = (32, 32)
    feature_dim: int = 16
    activation: str = "relu"

    def validate(self) -> None:
        if not self.learning_rate > 0:
            raise ConfigError("train.learning_rate", "must be > 0")
        if not 0 <= self.momentum < 1:
            raise ConfigError("train.momentum", "must be in [0, 1)")
        if not self.weight_decay >= 0:
            raise ConfigError("train.weight_decay", "must be >= 0")
        if self.epochs < 0:
            raise ConfigError("train.epochs", "must be >= 0")
        if self.warmup_epochs_for_means < 1:
            raise ConfigError("train.warmup_epochs_for_means", "must be >= 1")
        if self.feature_dim < 1 or any(h < 1 for h in self.hidden):
            raise ConfigError("train.hidden", "layer widths must be >= 1")
        if self.activation not in network.ACTIVATIONS:
            raise ConfigError("train.activation", f"must be one of {network.ACTIVATIONS}")

    @property
    def shape(self) -> Shape:
        return self.prototype_shape or Shape.default_for(self.feature_dim)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grouping"] = self.grouping.value
        d["prototype_shape"] = self.prototype_shape.value if self.prototype_shape else None
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "loss" in d:
            d["loss"] = LossConfig(**d["loss"])
        if "grouping" in d:
            d["grouping"] = GroupingMode(d["grouping"])
        if d.get("prototype_shape") is not None:
            d["prototype_shape"] = Shape(d["prototype_shape"])
        if "hidden" in d:
            d["hidden"] = tuple(int(h) for h in d["hidden"])
        return cls(**d)


# prototype grouping

def _category_name(label: str, domain: str, grouping: GroupingMode) -> str:
    if grouping is GroupingMode.ONE_CLASS:
        return "all"
    if is_live_label(label):
        return "live"
    if grouping is GroupingMode.BINARY:
        return "spoof"
    if grouping is GroupingMode.DOMAIN_BASED:
        return f"spoof@{domain}"
    return attack_name(label)


def build_prototype_set(dataset: Dataset, grouping: GroupingMode, dim: int, shape: Shape | None = None) -> PrototypeSet:
    """One unit-precision prototype per category implied by ``grouping``.

    Live (when present) comes first; the spoof categories follow in sorted
    order. Means start at zero; see :func:`init_prototypes`.
    """
    if len(dataset) == 0:
        raise EmptyDataset("cannot build prototypes from an empty dataset")
    shape = shape or Shape.default_for(dim)
    names = {_category_name(lab, dom, grouping) for lab, dom in zip(dataset.labels, dataset.domains)}
    ordered = (["live"] if "live" in names else []) + sorted(names - {"live"})
    protos = []
    for i, name in enumerate(ordered):
        kind = CategoryKind.LIVE if name in ("live", "all") else CategoryKind.ATTACK
        protos.append(GaussianPrototype.identity(CategoryId(kind, name, i), np.zeros(dim), shape))
    return PrototypeSet(dim, tuple(protos))


def assign_categories(dataset: Dataset, pset: PrototypeSet, grouping: GroupingMode) -> np.ndarray:
    index = {c.name: c.index for c in pset.categories}
    try:
        return np.array(
            [index[_category_name(lab, dom, grouping)] for lab, dom in zip(dataset.labels, dataset.domains)],
            dtype=np.intp,
        )
    except KeyError as exc:
        raise EmptyCategory(f"sample maps to category {exc.args[0]!r} which has no prototype") from None


def init_prototypes(pset: PrototypeSet, model: MlpParams, dataset: Dataset, categories: np.ndarray) -> PrototypeSet:
    """Set every mean to the category's mean feature and every precision to I."""
    z = network.extract(model, dataset.X)
    protos = []
    for p in pset:
        rows = categories == p.category.index
        if not np.any(rows):
            raise EmptyCategory(f"category {p.category.name!r} has no samples")
        mean = z[rows].sum(axis=0) / rows.sum()
        protos.append(p.with_params(mean, np.zeros((pset.dim, pset.dim))))
    return pset.replace_all(protos)


# parameter packing

def pack(model: MlpParams, pset: PrototypeSet) -> dict[str, np.ndarray]:
    state = dict(model.named_arrays())
    for i, p in enumerate(pset):
        state[f"proto{i}.mean"] = p.mean
        state[f"proto{i}.chol"] = p.chol
    return state


def unpack(state: dict[str, np.ndarray], model: MlpParams, pset: PrototypeSet) -> tuple[MlpParams, PrototypeSet]:
    net = MlpParams.from_named_arrays({k: v for k, v in state.items() if not k.startswith("proto")}, model.activation)
    protos = [p.with_params(state[f"proto{i}.mean"], state[f"proto{i}.chol"]) for i, p in enumerate(pset)]
    return net, pset.replace_all(protos)


def decays(name: str) -> bool:
    """Weight decay applies to network weight matrices only."""
    return name.endswith(".weight") and not name.startswith("proto")


def sgd_step(state, grads, velocities, cfg: TrainConfig):
    """One momentum-SGD update; returns new ``(state, velocities)`` dicts.

    ``v <- momentum * v + grad (+ weight_decay * theta for weights)``,
    ``theta <- theta - learning_rate * v``.
    """
    for name, g in grads.items():
        if name not in state or np.shape(g) != np.shape(state[name]):
            raise ShapeMismatch(f"gradient {name!r} does not match any parameter")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for {name}")
    new_state, new_vel = {}, {}
    for name, theta in state.items():
        g = grads.get(name)
        g = np.zeros_like(theta) if g is None else g
        if decays(name) and cfg.weight_decay:
            g = g + cfg.weight_decay * theta
        v = velocities.get(name)
        v = g if v is None else cfg.momentum * v + g
        new_vel[name] = v
        new_state[name] = theta - cfg.learning_rate * v
    return new_state, new_vel


# batching

def make_batches(categories: np.ndarray, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Stratified, shuffled index batches; the remainder is dropped.

    Each category gets a fixed quota per batch, proportional to its size with
    a floor of two (largest-remainder rounding), so every batch holds at least
    two samples of every category.
    """
    categories = np.asarray(categories)
    labels, counts = np.unique(categories, return_counts=True)
    k = len(labels)
    if np.any(counts < 2):
        small = labels[np.argmin(counts)]
        raise CategoryTooSmall(f"category {int(small)} has fewer than 2 samples")
    if batch_size < 2 * k:
        raise ConfigError("train.batch_size", f"must be >= 2 x {k} categories")

    spare = batch_size - 2 * k
    share = spare * counts / counts.sum()
    quota = 2 + np.floor(share).astype(int)
    left = batch_size - quota.sum()
    order = np.lexsort((np.arange(k), -(share - np.floor(share))))
    quota[order[:left]] += 1

    rng = np.random.default_rng([seed, epoch])
    pools = [rng.permutation(np.flatnonzero(categories == lab)) for lab in labels]
    n_batches = int(min(c // q for c, q in zip(counts, quota)))
    batches = []
    for b in range(n_batches):
        idx = np.concatenate([pool[b * q:(b + 1) * q] for pool, q in zip(pools, quota)])
        batches.append(rng.permutation(idx))
    return batches


# loss + gradients for one batch

@dataclass
class BatchLoss:
    ce: float
    trip: float
    total: float
    grads: dict[str, np.ndarray]


def batch_loss(model: MlpParams, pset: PrototypeSet, x, live_labels, categories, loss_cfg: LossConfig) -> BatchLoss:
    """Total loss on one batch and its gradient w.r.t. every packed parameter."""
    trace = network.forward(model, x)
    targets = np.where(live_labels, LIVE, SPOOF)
    ce, d_logits = cross_entropy_batch(trace.logits, targets)
    trip = md_triplet(pset, trace.z, categories, loss_cfg)
    grads, _ = network.backward(model, trace, d_logits, loss_cfg.lam * trip.d_z)
    for i in range(len(pset)):
        grads[f"proto{i}.mean"] = loss_cfg.lam * trip.d_mean[i]
        grads[f"proto{i}.chol"] = loss_cfg.lam * trip.d_chol[i]
    return BatchLoss(ce, trip.loss, total_loss(ce, trip.loss, loss_cfg), grads)


# training

@dataclass(frozen=True)
class EpochLog:
    epoch: int
    ce: float
    trip: float
    total: float


@dataclass(eq=False)
class Checkpoint:
    config: TrainConfig
    model: MlpParams
    prototypes: PrototypeSet
    epochs_completed: int = 0
    rng_state: dict = field(default_factory=dict)
    history: list[EpochLog] = field(default_factory=list)
    format_version: int = FORMAT_VERSION

    @property
    def grouping(self) -> GroupingMode:
        return self.config.grouping


def initialize(dataset: Dataset, cfg: TrainConfig) -> tuple[Checkpoint, np.ndarray]:
    cfg.validate()
    if len(dataset) == 0:
        raise EmptyDataset("training set is empty")
    rng = np.random.default_rng(cfg.seed)
    model = network.init_mlp(dataset.d_in, cfg.hidden, cfg.feature_dim, cfg.activation, rng)
    pset = build_prototype_set(dataset, cfg.grouping, cfg.feature_dim, cfg.shape)
    categories = assign_categories(dataset, pset, cfg.grouping)
    pset = init_prototypes(pset, model, dataset, categories)
    cp = Checkpoint(cfg, model, pset, 0, rng.bit_generator.state)
    return cp, categories


def train(dataset: Dataset, cfg: TrainConfig) -> Checkpoint:
    """Run ``cfg.epochs`` epochs of stratified momentum SGD on L_CE + lam * L_MDTrip."""
    cp, categories = initialize(dataset, cfg)
    model, pset = cp.model, cp.prototypes
    live = dataset.is_live
    state = pack(model, pset)
    velocities: dict[str, np.ndarray] = {}
    history = []
    for epoch in range(cfg.epochs):
        sums = np.zeros(3)
        batches = make_batches(categories, cfg.batch_size, cfg.seed, epoch)
        for idx in batches:
            res = batch_loss(model, pset, dataset.X[idx], live[idx], categories[idx], cfg.loss)
            if not np.isfinite(res.total):
                raise NonFiniteGradient(f"non-finite loss in epoch {epoch + 1}")
            state, velocities = sgd_step(state, res.grads, velocities, cfg)
            model, pset = unpack(state, model, pset)
            # the prototype constructor clamps the log-diagonal; keep state in sync
            state = pack(model, pset)
            sums += (res.ce, res.trip, res.total)
        ce, trip, tot = sums / max(len(batches), 1)
        history.append(EpochLog(epoch + 1, float(ce), float(trip), float(tot)))
        log.info("epoch %d  ce=%.6f  trip=%.6f  total=%.6f", epoch + 1, ce, trip, tot)
    return replace(cp, model=model, prototypes=pset, epochs_completed=cfg.epochs, history=history)


# checkpoint I/O

def _arr(a: np.ndarray):
    return np.asarray(a, dtype=np.float64).tolist()


def checkpoint_to_dict(cp: Checkpoint) -> dict:
    return {
        "format_version": cp.format_version,
        "config": cp.config.to_dict(),
        "activation": cp.model.activation,
        "layers": [{"weight": _arr(w), "bias": _arr(b)} for w, b in cp.model.layers],
        "head": {"weight": _arr(cp.model.head[0]), "bias": _arr(cp.model.head[1])},
        "prototypes": [
            {
                "kind": p.category.kind.value,
                "name": p.category.name,
                "index": p.category.index,
                "shape": p.shape.value,
                "mean": _arr(p.mean),
                "chol": _arr(p.chol),
            }
            for p in cp.prototypes
        ],
        "epochs_completed": cp.epochs_completed,
        "rng_state": cp.rng_state,
        "history": [asdict(h) for h in cp.history],
    }


def _canonical(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), allow_nan=False)


def checkpoint_from_dict(d: dict) -> Checkpoint:
    if d.get("format_version") != FORMAT_VERSION:
        raise FormatVersionMismatch(f"unsupported checkpoint format {d.get('format_version')!r}")
    cfg = TrainConfig.from_dict(d["config"])
    layers = [(np.array(l["weight"], dtype=np.float64), np.array(l["bias"], dtype=np.float64)) for l in d["layers"]]
    head = (np.array(d["head"]["weight"], dtype=np.float64), np.array(d["head"]["bias"], dtype=np.float64))
    model = MlpParams(layers, head, d["activation"])
    protos = [
        GaussianPrototype(
            CategoryId(CategoryKind(p["kind"]), p["name"], p["index"]),
            np.array(p["mean"], dtype=np.float64),
            np.array(p["chol"], dtype=np.float64),
            Shape(p["shape"]),
        )
        for p in d["prototypes"]
    ]
    pset = PrototypeSet(model.feature_dim, tuple(protos))
    history = [EpochLog(**h) for h in d.get("history", [])]
    return Checkpoint(cfg, model, pset, d["epochs_completed"], d["rng_state"], history, d["format_version"])


def save_checkpoint(cp: Checkpoint, path) -> None:
    payload = checkpoint_to_dict(cp)
    payload["crc32"] = zlib.crc32(_canonical(payload).encode("utf-8"))
    text = json.dumps(payload, sort_keys=True, indent=1, allow_nan=False) + "\n"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def load_checkpoint(path) -> Checkpoint:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorruptChecksum(f"checkpoint is not valid JSON: {exc}") from None
    if not isinstance(payload, dict) or "crc32" not in payload:
        raise CorruptChecksum("checkpoint has no crc32 field")
    stored = payload.pop("crc32")
    if zlib.crc32(_canonical(payload).encode("utf-8")) != stored:
        raise CorruptChecksum("checkpoint checksum mismatch")
    return checkpoint_from_dict(payload)
