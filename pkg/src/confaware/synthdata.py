"""Seeded synthetic benchmark with domain shift and a held-out attack type.

Every sample is ``base_mean * scale + shift + base_cov_scale * scale * noise``
with isotropic standard-normal noise, where ``scale`` and ``shift`` come from
the sample's capture domain.
"""

from __future__ import annotations

import csv
import io
import os
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfig, MalformedRow

LABEL_RE = re.compile(r"^(live|attack:[a-z0-9_\-]+)$")


def is_live_label(label: str) -> bool:
    return label == "live"


def attack_name(label: str) -> str | None:
    return label.split(":", 1)[1] if label.startswith("attack:") else None


@dataclass(frozen=True)
class SampleRecord:
    label: str
    domain: str
    x: np.ndarray


@dataclass(eq=False)
class Dataset:
    """Columnar collection of samples."""

    labels: list[str]
    domains: list[str]
    X: np.ndarray

    def __post_init__(self):
        self.labels = list(self.labels)
        self.domains = list(self.domains)
        X = np.asarray(self.X, dtype=np.float64)
        self.X = X if X.ndim == 2 and X.shape[0] == len(self.labels) else X.reshape(len(self.labels), -1)
        if len(self.domains) != len(self.labels):
            raise ValueError("labels and domains differ in length")

    def __len__(self) -> int:
        return len(self.labels)

    def __iter__(self):
        for lab, dom, x in zip(self.labels, self.domains, self.X):
            yield SampleRecord(lab, dom, x)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.labels == other.labels
            and self.domains == other.domains
            and self.X.shape == other.X.shape
            and np.array_equal(self.X, other.X)
        )

    @property
    def d_in(self) -> int:
        return self.X.shape[1]

    @property
    def is_live(self) -> np.ndarray:
        return np.array([is_live_label(lab) for lab in self.labels], dtype=bool)

    def subset(self, mask) -> "Dataset":
        idx = np.flatnonzero(mask)
        return Dataset([self.labels[i] for i in idx], [self.domains[i] for i in idx], self.X[idx])

    @classmethod
    def concat(cls, parts: list["Dataset"]) -> "Dataset":
        if not parts:
            return cls([], [], np.zeros((0, 0)))
        return cls(
            [lab for p in parts for lab in p.labels],
            [d for p in parts for d in p.domains],
            np.vstack([p.X for p in parts]),
        )


@dataclass(frozen=True)
class ClassSpec:
    label: str
    base_mean: tuple[float, ...]
    base_cov_scale: float = 1.0
    in_training: bool = True


@dataclass(frozen=True)
class DomainSpec:
    name: str
    shift: tuple[float, ...]
    scale: float = 1.0
    in_training: bool = True


@dataclass(frozen=True)
class ScenarioSpec:
    """A test split: the cross product of ``classes`` and ``domains``."""

    name: str
    classes: tuple[str, ...]
    domains: tuple[str, ...]


@dataclass(frozen=True)
class SynthConfig:
    d_in: int = 8
    classes: tuple[ClassSpec, ...] = ()
    domains: tuple[DomainSpec, ...] = ()
    scenarios: tuple[ScenarioSpec, ...] = ()
    train_count: int = 400
    test_count: int = 200
    counts: dict = field(default_factory=dict)  # optional "label|domain" -> count overrides
    seed: int = 7

    def count(self, label: str, domain: str, training: bool) -> int:
        return int(self.counts.get(f"{label}|{domain}", self.train_count if training else self.test_count))

    def validate(self) -> None:
        if self.d_in < 1:
            raise InvalidConfig("synth.d_in", "must be >= 1")
        labels = [c.label for c in self.classes]
        if len(set(labels)) != len(labels):
            raise InvalidConfig("synth.classes", "duplicate class label")
        for c in self.classes:
            if not LABEL_RE.match(c.label):
                raise InvalidConfig("synth.classes", f"bad label {c.label!r}")
            if len(c.base_mean) != self.d_in:
                raise InvalidConfig("synth.classes", f"{c.label}: base_mean has dim {len(c.base_mean)}")
            if not c.base_cov_scale > 0:
                raise InvalidConfig("synth.classes", f"{c.label}: base_cov_scale must be > 0")
        if sum(1 for c in self.classes if is_live_label(c.label)) != 1:
            raise InvalidConfig("synth.classes", "need exactly one live class")
        if sum(1 for c in self.classes if c.in_training and not is_live_label(c.label)) < 2:
            raise InvalidConfig("synth.classes", "need at least two training attack classes")
        if not any(not c.in_training for c in self.classes):
            raise InvalidConfig("synth.classes", "need at least one held-out class")
        names = [d.name for d in self.domains]
        if len(set(names)) != len(names):
            raise InvalidConfig("synth.domains", "duplicate domain name")
        for d in self.domains:
            if len(d.shift) != self.d_in:
                raise InvalidConfig("synth.domains", f"{d.name}: shift has dim {len(d.shift)}")
            if not d.scale > 0:
                raise InvalidConfig("synth.domains", f"{d.name}: scale must be > 0")
        if sum(d.in_training for d in self.domains) < 2:
            raise InvalidConfig("synth.domains", "need at least two training domains")
        if not any(not d.in_training for d in self.domains):
            raise InvalidConfig("synth.domains", "need at least one held-out domain")
        for s in self.scenarios:
            for lab in s.classes:
                if lab not in labels:
                    raise InvalidConfig("synth.scenarios", f"{s.name}: unknown class {lab!r}")
            for dom in s.domains:
                if dom not in names:
                    raise InvalidConfig("synth.scenarios", f"{s.name}: unknown domain {dom!r}")
        for key, n in self.counts.items():
            if int(n) <= 0:
                raise InvalidConfig("synth.counts", f"{key}: count must be > 0")


def default_config(seed: int = 7) -> SynthConfig:
    """The desk benchmark: 3 training classes, 1 held-out attack, 3+1 domains."""
    d = 8

    def vec(**entries):
        v = [0.0] * d
        for k, val in entries.items():
            v[int(k[1:])] = val
        return tuple(v)

    classes = (
        ClassSpec("live", vec()),
        ClassSpec("attack:print", vec(e0=4.0)),
        ClassSpec("attack:replay", vec(e1=4.0)),
        ClassSpec("attack:mask", vec(e0=-3.0, e1=-3.0, e2=3.0), in_training=False),
    )
    domains = (
        DomainSpec("dom_a", vec(), 1.0),
        DomainSpec("dom_b", vec(e3=0.8, e4=0.6), 1.0),
        DomainSpec("dom_c", vec(e5=-0.6, e6=0.8), 1.0),
        DomainSpec("dom_test", vec(e3=1.2, e7=1.6), 1.2, in_training=False),
    )
    train_domains = ("dom_a", "dom_b", "dom_c")
    scenarios = (
        ScenarioSpec("seen", ("live", "attack:print", "attack:replay"), train_domains),
        ScenarioSpec("shifted_known", ("live", "attack:print", "attack:replay"), ("dom_test",)),
        ScenarioSpec("unknown_attack", ("live", "attack:mask"), ("dom_test",)),
        ScenarioSpec("mixed", ("live", "attack:print", "attack:replay", "attack:mask"), ("dom_test",)),
    )
    return SynthConfig(d_in=d, classes=classes, domains=domains, scenarios=scenarios, seed=seed)


def _draw(rng: np.random.Generator, cls: ClassSpec, dom: DomainSpec, n: int) -> np.ndarray:
    mean = np.asarray(cls.base_mean) * dom.scale + np.asarray(dom.shift)
    noise = rng.standard_normal((n, len(cls.base_mean)))
    return mean + cls.base_cov_scale * dom.scale * noise


def generate(config: SynthConfig) -> tuple[Dataset, dict[str, Dataset]]:
    """Draw the training set and every configured test scenario.

    Draw order is fixed (training cells, then scenarios in declaration order,
    cells in class-major order), so output is a pure function of the config.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    classes = {c.label: c for c in config.classes}
    domains = {d.name: d for d in config.domains}

    def cells(cls_list, dom_list, training):
        parts = []
        for lab in cls_list:
            for dom in dom_list:
                n = config.count(lab, dom, training)
                x = _draw(rng, classes[lab], domains[dom], n)
                parts.append(Dataset([lab] * n, [dom] * n, x))
        return Dataset.concat(parts)

    train = cells(
        [c.label for c in config.classes if c.in_training],
        [d.name for d in config.domains if d.in_training],
        True,
    )
    tests = {s.name: cells(s.classes, s.domains, False) for s in config.scenarios}
    return train, tests


# CSV I/O

def _header(d_in: int) -> list[str]:
    return ["label", "domain", *[f"f{i}" for i in range(d_in)]]


def write_csv(dataset: Dataset, path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_header(dataset.d_in))
    for lab, dom, x in zip(dataset.labels, dataset.domains, dataset.X):
        writer.writerow([lab, dom, *[repr(float(v)) for v in x]])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def read_csv(path) -> Dataset:
    """Read a dataset CSV.

    Raises:
        MalformedRow: on a bad header (row 0) or an invalid data row.
        OSError: if the file cannot be read.
    """
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise MalformedRow(0, "empty file")
    header = rows[0]
    d_in = len(header) - 2
    if d_in < 1 or header != _header(d_in):
        raise MalformedRow(0, f"expected header label,domain,f0..f{{d-1}}, got {','.join(header)}")
    labels, domains, values = [], [], []
    for r, row in enumerate(rows[1:], start=1):
        if len(row) != d_in + 2:
            raise MalformedRow(r, f"expected {d_in + 2} fields, got {len(row)}")
        if not LABEL_RE.match(row[0]):
            raise MalformedRow(r, f"bad label {row[0]!r}")
        if not row[1]:
            raise MalformedRow(r, "empty domain")
        try:
            x = [float(v) for v in row[2:]]
        except ValueError as exc:
            raise MalformedRow(r, str(exc)) from None
        if not all(np.isfinite(x)):
            raise MalformedRow(r, "non-finite value")
        labels.append(row[0])
        domains.append(row[1])
        values.append(x)
    return Dataset(labels, domains, np.array(values, dtype=np.float64).reshape(len(labels), d_in))


def scenario_from_path(path) -> str:
    stem = os.path.splitext(os.path.basename(path))[0]
    return stem[len("test_"):] if stem.startswith("test_") else stem
