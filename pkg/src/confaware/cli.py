"""Command-line entry points: generate, train, eval, predict, sweep.

Exit codes: 0 success, 2 configuration/usage error, 3 I/O error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import logging
import os
import sys
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import inference, metrics, synthdata, trainer
from .errors import (
    ConfAwareError,
    ConfigError,
    CorruptChecksum,
    FormatVersionMismatch,
    MalformedRow,
    NonFiniteGradient,
)
from .losses import LossConfig
from .prototypes import Shape
from .synthdata import ClassSpec, DomainSpec, ScenarioSpec, SynthConfig
from .trainer import GroupingMode, TrainConfig

log = logging.getLogger("confaware")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
DEFAULT_QUANTILES = (0.0, 0.3, 0.5, 0.7)
DEFAULT_GRID = tuple(round(0.1 * i, 10) for i in range(10))


@dataclass(frozen=True)
class EvalConfig:
    quantiles: tuple[float, ...] = DEFAULT_QUANTILES
    grid: tuple[float, ...] = DEFAULT_GRID
    hter_mode: str = "eer"
    cdf_points: int = 101
    group_by: str = "label"

    def validate(self) -> None:
        for name in ("quantiles", "grid"):
            for p in getattr(self, name):
                if not 0.0 <= p <= 1.0:
                    raise ConfigError(f"eval.{name}", f"quantile {p} outside [0, 1]")
        if self.hter_mode not in metrics.HTER_MODES:
            raise ConfigError("eval.hter_mode", f"must be one of {metrics.HTER_MODES}")
        if self.cdf_points < 2:
            raise ConfigError("eval.cdf_points", "must be >= 2")
        if self.group_by not in ("label", "domain"):
            raise ConfigError("eval.group_by", "must be 'label' or 'domain'")


@dataclass(frozen=True)
class RunConfig:
    synth: SynthConfig = field(default_factory=synthdata.default_config)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> None:
        self.synth.validate()
        self.train.validate()
        self.eval.validate()


# config parsing

def _check_keys(section: str, data: dict, allowed) -> None:
    if not isinstance(data, dict):
        raise ConfigError(section, "must be a mapping")
    for key in data:
        if key not in allowed:
            raise ConfigError(f"{section}.{key}", "unknown key")


def _field_names(cls) -> set[str]:
    return {f.name for f in dataclasses.fields(cls)}


def _build(cls, section: str, data: dict, convert=None):
    _check_keys(section, data, _field_names(cls))
    kwargs = dict(data)
    for key, fn in (convert or {}).items():
        if key in kwargs:
            try:
                kwargs[key] = fn(kwargs[key])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{section}.{key}", str(exc)) from None
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(section, str(exc)) from None


def _floats(v):
    return tuple(float(x) for x in v)


def _synth_from_dict(d: dict) -> SynthConfig:
    base = synthdata.default_config()
    _check_keys("synth", d, _field_names(SynthConfig))
    conv = {
        "classes": lambda v: tuple(
            _build(ClassSpec, "synth.classes", c, {"base_mean": _floats}) for c in v
        ),
        "domains": lambda v: tuple(_build(DomainSpec, "synth.domains", c, {"shift": _floats}) for c in v),
        "scenarios": lambda v: tuple(
            _build(ScenarioSpec, "synth.scenarios", c, {"classes": tuple, "domains": tuple}) for c in v
        ),
    }
    kwargs = {}
    for key, val in d.items():
        kwargs[key] = conv[key](val) if key in conv else val
    return dataclasses.replace(base, **kwargs)


def _train_from_dict(d: dict) -> TrainConfig:
    def loss(v):
        return _build(LossConfig, "train.loss", v)

    def grouping(v):
        try:
            return GroupingMode(v)
        except ValueError:
            raise ConfigError("train.grouping", f"unknown grouping {v!r}") from None

    def shape(v):
        return None if v is None else Shape(v)

    return _build(
        TrainConfig,
        "train",
        d,
        {"loss": loss, "grouping": grouping, "prototype_shape": shape, "hidden": lambda v: tuple(int(x) for x in v)},
    )


def config_from_dict(d: dict | None) -> RunConfig:
    d = d or {}
    _check_keys("config", d, ("synth", "train", "eval"))
    cfg = RunConfig(
        synth=_synth_from_dict(d.get("synth") or {}),
        train=_train_from_dict(d.get("train") or {}),
        eval=_build(EvalConfig, "eval", d.get("eval") or {}, {"quantiles": _floats, "grid": _floats}),
    )
    cfg.validate()
    return cfg


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return config_from_dict({})
    with open(path, encoding="utf-8") as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError("config", f"cannot parse {path}: {exc}") from None
    return config_from_dict(data)


def parse_quantiles(text: str | None, flag: str = "--quantiles") -> tuple[float, ...] | None:
    if text is None:
        return None
    if not text.strip():
        return ()
    try:
        return tuple(float(t) for t in text.split(","))
    except ValueError:
        raise ConfigError(flag, f"not a comma-separated list of numbers: {text!r}") from None


def apply_overrides(cfg: RunConfig, args) -> RunConfig:
    synth, train, ev = cfg.synth, cfg.train, cfg.eval
    if getattr(args, "seed", None) is not None:
        synth = dataclasses.replace(synth, seed=args.seed)
        train = dataclasses.replace(train, seed=args.seed)
    if getattr(args, "grouping", None) is not None:
        train = dataclasses.replace(train, grouping=GroupingMode(args.grouping))
    if getattr(args, "epochs", None) is not None:
        train = dataclasses.replace(train, epochs=args.epochs)
    if getattr(args, "hter_mode", None) is not None:
        ev = dataclasses.replace(ev, hter_mode=args.hter_mode)
    q = parse_quantiles(getattr(args, "quantiles", None))
    if q is not None:
        ev = dataclasses.replace(ev, quantiles=q or (0.0,))
    g = parse_quantiles(getattr(args, "grid", None), "--grid")
    if g is not None:
        ev = dataclasses.replace(ev, grid=g or (0.0,))
    out = RunConfig(synth, train, ev)
    out.validate()
    return out


# commands

def cmd_generate(cfg: RunConfig, out_dir: str) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    train, tests = synthdata.generate(cfg.synth)
    paths = [os.path.join(out_dir, "train.csv")]
    synthdata.write_csv(train, paths[0])
    for name, ds in tests.items():
        path = os.path.join(out_dir, f"test_{name}.csv")
        synthdata.write_csv(ds, path)
        paths.append(path)
    return paths


def write_train_log(history, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "L_CE", "L_MDTrip", "L_total"])
        for h in history:
            w.writerow([h.epoch, repr(h.ce), repr(h.trip), repr(h.total)])


def cmd_train(cfg: RunConfig, data_dir: str, out_dir: str) -> trainer.Checkpoint:
    dataset = synthdata.read_csv(os.path.join(data_dir, "train.csv"))
    cp = trainer.train(dataset, cfg.train)
    os.makedirs(out_dir, exist_ok=True)
    trainer.save_checkpoint(cp, os.path.join(out_dir, "checkpoint.json"))
    write_train_log(cp.history, os.path.join(out_dir, "train_log.csv"))
    return cp


def _groups(ds: synthdata.Dataset, key: str) -> list[str]:
    return list(ds.labels if key == "label" else ds.domains)


def evaluate_dataset(cp: trainer.Checkpoint, ds: synthdata.Dataset, ev: EvalConfig, out_dir: str) -> list[metrics.EvalRow]:
    """Score one test split and write its report bundle into ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    live_prob, conf = inference.score(cp.model, cp.prototypes, ds.X)
    rows = metrics.filtered_eval(ds.is_live, live_prob, conf, ev.quantiles, ev.hter_mode)
    metrics.write_eval_rows(rows, os.path.join(out_dir, "eval_rows.csv"))
    groups = _groups(ds, ev.group_by)
    cdfs = metrics.confidence_cdf(conf, groups, ev.cdf_points)
    metrics.write_cdfs(cdfs, out_dir)
    with open(os.path.join(out_dir, "cdf.svg"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(metrics.cdf_svg(cdfs))
    metrics.write_groups(metrics.groupby_report(conf, groups), os.path.join(out_dir, "groups.csv"))
    return rows


def summary_csv(results: dict[str, list[metrics.EvalRow]], hter_mode: str) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scenario", "p", "retained", "retained_frac", "hter", "auc", "hter_mode"])
    for name, rows in results.items():
        for r in rows:
            w.writerow(
                [name, f"{r.p:g}", r.retained, f"{r.retained_frac:.4f}",
                 metrics.format_cell(r.hter), metrics.format_cell(r.auc), hter_mode]
            )
    return buf.getvalue()


def cmd_eval(cfg: RunConfig, checkpoint: str, test_files: list[str], out_dir: str) -> dict[str, list[metrics.EvalRow]]:
    cp = trainer.load_checkpoint(checkpoint)
    results = {}
    for path in test_files:
        name = synthdata.scenario_from_path(path)
        ds = synthdata.read_csv(path)
        results[name] = evaluate_dataset(cp, ds, cfg.eval, os.path.join(out_dir, name))
    text = summary_csv(results, cfg.eval.hter_mode)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "summary.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    sys.stdout.write(text)
    return results


def parse_threshold(spec: str, cp: trainer.Checkpoint) -> inference.ConfidenceThreshold:
    """``fixed:<value>`` or ``quantile:<p>:<calibration csv>``."""
    kind, _, rest = spec.partition(":")
    if kind == "fixed":
        try:
            return inference.ConfidenceThreshold.fixed(float(rest))
        except ValueError:
            raise ConfigError("--threshold", f"bad fixed threshold {rest!r}") from None
    if kind == "quantile":
        p_text, _, calib = rest.partition(":")
        try:
            p = float(p_text)
        except ValueError:
            raise ConfigError("--threshold", f"bad quantile {p_text!r}") from None
        if not 0.0 <= p <= 1.0:
            raise ConfigError("--threshold", f"quantile {p} outside [0, 1]")
        if not calib:
            raise ConfigError("--threshold", "quantile mode needs a calibration csv: quantile:<p>:<path>")
        _, conf = inference.score(cp.model, cp.prototypes, synthdata.read_csv(calib).X)
        return inference.quantile_threshold(conf, p)
    raise ConfigError("--threshold", f"expected fixed:<v> or quantile:<p>:<csv>, got {spec!r}")


def cmd_predict(checkpoint: str, input_csv: str, threshold_spec: str, out_dir: str) -> list:
    cp = trainer.load_checkpoint(checkpoint)
    threshold = parse_threshold(threshold_spec, cp)
    ds = synthdata.read_csv(input_csv)
    decisions = [inference.decide(cp.model, cp.prototypes, x, threshold) for x in ds.X]
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "decisions.csv"), "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "decision", "live_prob", "alert", "confidence"])
        for i, d in enumerate(decisions):
            if isinstance(d, inference.Accept):
                w.writerow([i, "accept", repr(d.live_probability), "", repr(d.confidence)])
            else:
                w.writerow([i, "reject", "", d.alert, repr(d.confidence)])
    return decisions


def cmd_sweep(cfg: RunConfig, checkpoint: str, test_file: str, out_dir: str) -> list[metrics.EvalRow]:
    cp = trainer.load_checkpoint(checkpoint)
    ds = synthdata.read_csv(test_file)
    live_prob, conf = inference.score(cp.model, cp.prototypes, ds.X)
    rows = metrics.filtered_eval(ds.is_live, live_prob, conf, cfg.eval.grid, cfg.eval.hter_mode)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "sweep.csv"), "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["p", "retained", "hter", "auc"])
        for r in rows:
            w.writerow([metrics._fmt(r.p), r.retained, metrics._fmt(r.hter), metrics._fmt(r.auc)])
    return rows


# argument parsing

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="confaware", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch losses")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_help):
        p.add_argument("--config", help="YAML/JSON run config")
        p.add_argument("--seed", type=int, help="override synth/train seed")
        p.add_argument("--out", required=True, help=out_help)
        p.add_argument("--quantiles", help="comma-separated quantiles p")
        p.add_argument("--grouping", choices=[g.value for g in GroupingMode])
        p.add_argument("--hter-mode", choices=metrics.HTER_MODES)

    p = sub.add_parser("generate", help="write the synthetic benchmark CSVs")
    common(p, "output directory")

    p = sub.add_parser("train", help="train a model on <data>/train.csv")
    common(p, "output directory for checkpoint.json and train_log.csv")
    p.add_argument("--data", required=True, help="directory holding train.csv")
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("eval", help="quantile-filtered evaluation of test files")
    common(p, "report directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test", nargs="+", required=True, help="test CSV files")

    p = sub.add_parser("predict", help="accept/reject decisions for an input CSV")
    common(p, "output directory for decisions.csv")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--threshold", required=True, help="fixed:<v> or quantile:<p>:<calibration csv>")

    p = sub.add_parser("sweep", help="HTER/AUC over a grid of quantiles")
    common(p, "output directory for sweep.csv")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--grid", help="comma-separated quantiles (default 0,0.1,...,0.9)")
    return parser


def run(args) -> None:
    cfg = apply_overrides(load_config(args.config), args)
    if args.command == "generate":
        cmd_generate(cfg, args.out)
    elif args.command == "train":
        cmd_train(cfg, args.data, args.out)
    elif args.command == "eval":
        cmd_eval(cfg, args.checkpoint, args.test, args.out)
    elif args.command == "predict":
        cmd_predict(args.checkpoint, args.input, args.threshold, args.out)
    elif args.command == "sweep":
        cmd_sweep(cfg, args.checkpoint, args.test, args.out)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        run(args)
    except NonFiniteGradient as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (MalformedRow, CorruptChecksum, FormatVersionMismatch, OSError) as exc:
        print(f"error: I/O: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ConfAwareError, ValueError) as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FloatingPointError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
